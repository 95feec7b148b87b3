//! Filter-then-select pipeline and the batch runner.
//!
//! A cheap backend ranks the candidates (matching scores or bubble-sort
//! comparisons) and only the best `top_k` are shown, best first, to the
//! selecting backend, which makes the final call including "none".

use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, CostLedger};
use crate::error::{Error, Result};
use crate::eval::{score_predictions, CostModel, MetricsReport, PredictionRow, PredictionSet};
use crate::records::{retrieve_fewshot, Dataset, FewShotExample, MatchTask};
use crate::strategies::{Strategies, StrategyResult, TraceEntry};

pub const DEFAULT_TOP_K: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterStrategy {
    Matching,
    ComparingBubble,
}

#[derive(Clone)]
pub struct PipelineConfig {
    pub filter_strategy: FilterStrategy,
    pub filter_backend: Arc<dyn Backend>,
    pub top_k: usize,
    pub select_backend: Arc<dyn Backend>,
    pub allow_none: bool,
}

impl PipelineConfig {
    pub fn new(filter_backend: Arc<dyn Backend>, select_backend: Arc<dyn Backend>) -> Self {
        Self {
            filter_strategy: FilterStrategy::Matching,
            filter_backend,
            top_k: DEFAULT_TOP_K,
            select_backend,
            allow_none: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_k == 0 {
            return Err(Error::InvalidK(0));
        }
        if self.filter_strategy == FilterStrategy::Matching && !self.filter_backend.wants_probabilities() {
            warn!(
                "filter backend `{}` reports no probabilities: matching scores collapse to yes/no buckets; \
                 comparing_bubble ranks without them",
                self.filter_backend.model_name()
            );
        }
        Ok(())
    }
}

pub fn run_comem(task: &MatchTask, config: &PipelineConfig) -> Result<StrategyResult> {
    Strategies::default().run_comem(task, config)
}

impl Strategies {
    pub fn run_comem(&self, task: &MatchTask, config: &PipelineConfig) -> Result<StrategyResult> {
        if config.top_k == 0 {
            return Err(Error::InvalidK(0));
        }
        let keep = config.top_k.min(task.n());
        let filter_backend = config.filter_backend.as_ref();
        let filtered = match config.filter_strategy {
            // the filter only ranks; "no match" is the selector's call
            FilterStrategy::Matching => self.match_pairwise(task, filter_backend, &[]).map(|mut r| {
                r.prediction = None;
                r
            }),
            FilterStrategy::ComparingBubble => self.compare_bubble_topk(task, filter_backend, keep),
        }
        .map_err(|e| e.in_task(&task.task_id, Some("filter")))?;
        let kept: Vec<usize> = filtered.ranking.as_ref().expect("filter ranks")[..keep].to_vec();

        let selected = self
            .select_among(task, config.select_backend.as_ref(), &kept, config.allow_none)
            .map_err(|e| e.in_task(&task.task_id, Some("select")))?;

        let mut out = StrategyResult {
            prediction: selected.prediction,
            scores: filtered.scores.clone(),
            ranking: Some(kept),
            ..StrategyResult::default()
        };
        out.absorb("filter", filtered);
        out.absorb("select", selected);
        Ok(out)
    }
}

/// Few-shot settings for the matching strategy.
#[derive(Debug, Clone)]
pub struct FewShot {
    pub pool: Arc<Vec<FewShotExample>>,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone)]
pub enum JobKind {
    Matching {
        backend: Arc<dyn Backend>,
        fewshot: Option<FewShot>,
    },
    /// Bubble top-1 followed by matching on the winner.
    Comparing { backend: Arc<dyn Backend> },
    Selecting {
        backend: Arc<dyn Backend>,
        allow_none: bool,
    },
    Comem(PipelineConfig),
}

impl JobKind {
    pub fn cost_model(&self) -> CostModel {
        match self {
            JobKind::Matching { fewshot, .. } => CostModel::Matching {
                shots: fewshot.as_ref().map_or(0, |f| f.positives + f.negatives),
            },
            JobKind::Comparing { .. } => CostModel::CompareThenMatch,
            JobKind::Selecting { .. } => CostModel::Selecting,
            JobKind::Comem(c) => CostModel::Comem {
                filter: c.filter_strategy,
                top_k: c.top_k,
            },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            JobKind::Matching { .. } => "matching",
            JobKind::Comparing { .. } => "comparing",
            JobKind::Selecting { .. } => "selecting",
            JobKind::Comem(_) => "comem",
        }
    }

    fn run(&self, strategies: &Strategies, task: &MatchTask) -> Result<StrategyResult> {
        match self {
            JobKind::Matching { backend, fewshot } => {
                let shots = match fewshot {
                    Some(f) => retrieve_fewshot(&f.pool, task, f.positives, f.negatives)
                        .map_err(|e| e.in_task(&task.task_id, None))?,
                    None => Vec::new(),
                };
                strategies.match_pairwise(task, backend.as_ref(), &shots)
            }
            JobKind::Comparing { backend } => strategies.compare_then_match(task, backend.as_ref()),
            JobKind::Selecting {
                backend,
                allow_none,
            } => strategies.select_from_list(task, backend.as_ref(), *allow_none),
            JobKind::Comem(config) => strategies.run_comem(task, config),
        }
    }
}

#[derive(Clone)]
pub struct Job {
    pub name: String,
    pub kind: JobKind,
}

#[derive(Debug, Clone, Copy)]
pub struct SuiteOptions {
    pub parallelism: usize,
    /// Abort on the first failing task instead of recording and skipping it.
    pub strict: bool,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            parallelism: 1,
            strict: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskFailure {
    pub task_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct JobReport {
    pub name: String,
    pub strategy: &'static str,
    pub cost_model: CostModel,
    pub metrics: MetricsReport,
    #[serde(skip)]
    pub predictions: Vec<PredictionRow>,
    pub failures: Vec<TaskFailure>,
    /// Candidate counts of the tasks that ran, for cost expectations.
    #[serde(skip)]
    pub task_sizes: Vec<usize>,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub dataset: crate::records::DatasetSummary,
    pub jobs: Vec<JobReport>,
}

pub(crate) fn thread_pool(parallelism: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::config("parallelism", e.to_string()))
}

/// Runs one job over every task. Outcomes are assembled in task order.
pub fn run_job(dataset: &Dataset, job: &Job, options: &SuiteOptions) -> Result<JobReport> {
    let strategies = Strategies::default();
    if let JobKind::Comem(c) = &job.kind {
        c.validate()?;
    }
    let pool = thread_pool(options.parallelism)?;
    let outcomes: Vec<Result<StrategyResult>> = pool.install(|| {
        dataset
            .tasks()
            .par_iter()
            .map(|t| job.kind.run(&strategies, t).map_err(|e| e.in_task(&t.task_id, None)))
            .collect()
    });

    let mut predictions = Vec::with_capacity(dataset.len());
    let mut failures = Vec::new();
    let mut trace = Vec::new();
    let mut ledger = CostLedger::default();
    let mut ok_tasks = Vec::with_capacity(dataset.len());
    for (task, outcome) in dataset.tasks().iter().zip(outcomes) {
        match outcome {
            Ok(r) => {
                ledger += &r.ledger;
                trace.extend(r.trace);
                predictions.push(PredictionRow::from_task(task, r.prediction));
                ok_tasks.push(task.clone());
            }
            Err(e) if !options.strict => {
                warn!("job {}: {e}", job.name);
                failures.push(TaskFailure {
                    task_id: task.task_id.clone(),
                    error: e.to_string(),
                });
            }
            Err(e) => return Err(e),
        }
    }

    let evaluated = Dataset::new(dataset.name.clone(), ok_tasks)?;
    let preds = PredictionSet::from_rows(&predictions);
    let mut metrics = score_predictions(&evaluated, &preds)?;
    metrics.ledger = ledger;
    Ok(JobReport {
        name: job.name.clone(),
        strategy: job.kind.label(),
        cost_model: job.kind.cost_model(),
        metrics,
        predictions,
        failures,
        task_sizes: evaluated.tasks().iter().map(MatchTask::n).collect(),
        trace,
    })
}

pub fn run_strategy_suite(dataset: &Dataset, jobs: &[Job], options: &SuiteOptions) -> Result<SuiteReport> {
    let reports = jobs
        .iter()
        .map(|j| run_job(dataset, j, options))
        .collect::<Result<Vec<_>>>()?;
    Ok(SuiteReport {
        dataset: dataset.summary(),
        jobs: reports,
    })
}
