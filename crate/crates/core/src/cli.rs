//! Config-driven command line: `run`, `sweep`, `validate` and `convert`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, HttpBackend, HttpConfig, OracleBackend, OracleConfig};
use crate::comem::{
    run_strategy_suite, FewShot, FilterStrategy, Job, JobKind, PipelineConfig, SuiteOptions, SuiteReport,
    DEFAULT_TOP_K,
};
use crate::error::{Error, Result};
use crate::eval::{
    cost_report, position_csv, read_prediction_rows, sweep_csv, sweep_top_k, validate_consistency,
    write_prediction_rows, CostInput, CostTable, MetricsReport,
};
use crate::records::{load_fewshot_pool, load_pair_table, load_tasks, Dataset, DatasetSource};
use crate::synth::{synthetic_dataset, SynthConfig};

#[derive(Debug, Parser)]
#[command(name = "em", version, about = "Entity matching with LLM strategies")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every job in a config and write reports.
    Run {
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Abort on the first failing task.
        #[arg(long)]
        strict: bool,
    },
    /// Re-run a comem job for several values of k.
    Sweep {
        config: PathBuf,
        /// Comma separated, e.g. `1,2,4,8`.
        #[arg(long, value_delimiter = ',', default_values_t = (1..=10).collect::<Vec<usize>>())]
        ks: Vec<usize>,
        /// Job to sweep; defaults to the only comem job.
        #[arg(long)]
        job: Option<String>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Check a predictions file for consistency violations.
    Validate {
        predictions: PathBuf,
        /// Exit nonzero when violations are found.
        #[arg(long)]
        strict: bool,
    },
    /// Convert a pair table into task JSONL.
    Convert {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    TaskJsonl { path: PathBuf },
    PairTable { pairs: PathBuf, left: PathBuf, right: PathBuf },
    Synthetic(SynthConfig),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpSpec {
    #[serde(flatten)]
    pub config: HttpConfig,
    /// Name of the environment variable holding the API key.
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Oracle(OracleConfig),
    Http(HttpSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShotSpec {
    pub positives: usize,
    pub negatives: usize,
}

fn yes() -> bool {
    true
}
fn default_top_k() -> usize {
    DEFAULT_TOP_K
}
fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case", deny_unknown_fields)]
pub enum JobSpec {
    Matching {
        name: String,
        backend: String,
        #[serde(default)]
        fewshot: Option<ShotSpec>,
    },
    CompareThenMatch {
        name: String,
        backend: String,
    },
    Selecting {
        name: String,
        backend: String,
        #[serde(default = "yes")]
        allow_none: bool,
    },
    Comem {
        name: String,
        filter_backend: String,
        select_backend: String,
        #[serde(default = "default_filter")]
        filter: FilterStrategy,
        #[serde(default = "default_top_k")]
        top_k: usize,
        #[serde(default = "yes")]
        allow_none: bool,
    },
}

fn default_filter() -> FilterStrategy {
    FilterStrategy::Matching
}

impl JobSpec {
    pub fn name(&self) -> &str {
        match self {
            JobSpec::Matching { name, .. }
            | JobSpec::CompareThenMatch { name, .. }
            | JobSpec::Selecting { name, .. }
            | JobSpec::Comem { name, .. } => name,
        }
    }

    fn backends(&self) -> Vec<(&'static str, &str)> {
        match self {
            JobSpec::Matching { backend, .. }
            | JobSpec::CompareThenMatch { backend, .. }
            | JobSpec::Selecting { backend, .. } => vec![("backend", backend)],
            JobSpec::Comem {
                filter_backend,
                select_backend,
                ..
            } => vec![("filter_backend", filter_backend), ("select_backend", select_backend)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    #[serde(default)]
    pub fewshot_pool: Option<PathBuf>,
    pub backends: BTreeMap<String, BackendSpec>,
    pub jobs: Vec<JobSpec>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub strict: bool,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn valid_job_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl RunConfig {
    /// Parses a config file; relative paths are resolved against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut config: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::TaskJsonl { path } => fix(path),
            DatasetSpec::PairTable { pairs, left, right } => {
                fix(pairs);
                fix(left);
                fix(right);
            }
            DatasetSpec::Synthetic(_) => {}
        }
        if let Some(p) = &mut self.fewshot_pool {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.parallelism == 0 {
            return Err(Error::config("parallelism", "must be >= 1"));
        }
        if self.jobs.is_empty() {
            return Err(Error::config("jobs", "no jobs defined"));
        }
        for (name, spec) in &self.backends {
            if let BackendSpec::Oracle(o) = spec {
                o.validate().map_err(|e| match e {
                    Error::Config { path, message } => Error::config(format!("backends.{name}.{path}"), message),
                    e => e,
                })?;
            }
        }
        let mut seen = BTreeSet::new();
        for (i, job) in self.jobs.iter().enumerate() {
            let at = |field: &str| format!("jobs[{i}].{field}");
            if !valid_job_name(job.name()) {
                return Err(Error::config(at("name"), format!("`{}` is not a valid file stem", job.name())));
            }
            if !seen.insert(job.name()) {
                return Err(Error::config(at("name"), format!("duplicate job name `{}`", job.name())));
            }
            for (field, backend) in job.backends() {
                if !self.backends.contains_key(backend) {
                    return Err(Error::config(
                        at(field),
                        format!("job `{}` references undefined backend `{backend}`", job.name()),
                    ));
                }
            }
            match job {
                JobSpec::Comem { top_k: 0, .. } => return Err(Error::config(at("top_k"), "must be >= 1")),
                JobSpec::Matching { fewshot: Some(s), .. }
                    if s.positives + s.negatives > 0 && self.fewshot_pool.is_none() =>
                {
                    return Err(Error::config(at("fewshot"), "requires a top-level `fewshot_pool`"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::TaskJsonl { path } => load_tasks(&DatasetSource::TaskJsonl(path.clone())),
            DatasetSpec::PairTable { pairs, left, right } => load_pair_table(pairs, left, right),
            DatasetSpec::Synthetic(cfg) => synthetic_dataset(cfg),
        }
    }

    /// Instantiates named backends. Oracles learn the dataset's ground truth.
    pub fn build_backends(&self, dataset: &Dataset) -> Result<BTreeMap<String, Arc<dyn Backend>>> {
        self.backends
            .iter()
            .map(|(name, spec)| {
                let backend: Arc<dyn Backend> = match spec {
                    BackendSpec::Oracle(cfg) => {
                        Arc::new(OracleBackend::for_dataset(cfg.clone(), dataset)?.with_name(name.clone()))
                    }
                    BackendSpec::Http(h) => {
                        let mut config = h.config.clone();
                        if let Some(var) = &h.api_key_env {
                            config.api_key = Some(std::env::var(var).map_err(|_| {
                                Error::config(
                                    format!("backends.{name}.api_key_env"),
                                    format!("environment variable `{var}` is not set"),
                                )
                            })?);
                        }
                        Arc::new(HttpBackend::new(config))
                    }
                };
                Ok((name.clone(), backend))
            })
            .collect()
    }

    pub fn build_jobs(&self, dataset: &Dataset) -> Result<Vec<Job>> {
        let backends = self.build_backends(dataset)?;
        let pool = match &self.fewshot_pool {
            Some(p) => Some(Arc::new(load_fewshot_pool(p)?)),
            None => None,
        };
        Ok(self
            .jobs
            .iter()
            .map(|spec| {
                let kind = match spec {
                    JobSpec::Matching { backend, fewshot, .. } => JobKind::Matching {
                        backend: backends[backend].clone(),
                        fewshot: fewshot.zip(pool.clone()).map(|(s, pool)| FewShot {
                            pool,
                            positives: s.positives,
                            negatives: s.negatives,
                        }),
                    },
                    JobSpec::CompareThenMatch { backend, .. } => JobKind::Comparing {
                        backend: backends[backend].clone(),
                    },
                    JobSpec::Selecting { backend, allow_none, .. } => JobKind::Selecting {
                        backend: backends[backend].clone(),
                        allow_none: *allow_none,
                    },
                    JobSpec::Comem {
                        filter_backend,
                        select_backend,
                        filter,
                        top_k,
                        allow_none,
                        ..
                    } => JobKind::Comem(PipelineConfig {
                        filter_strategy: *filter,
                        filter_backend: backends[filter_backend].clone(),
                        top_k: *top_k,
                        select_backend: backends[select_backend].clone(),
                        allow_none: *allow_none,
                    }),
                };
                Job {
                    name: spec.name().to_string(),
                    kind,
                }
            })
            .collect())
    }

    pub fn suite_options(&self, strict_override: bool) -> SuiteOptions {
        SuiteOptions {
            parallelism: self.parallelism,
            strict: self.strict || strict_override,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct RunSummary<'a> {
    #[serde(flatten)]
    pub report: &'a SuiteReport,
    pub cost: &'a CostTable,
}

pub fn suite_cost_table(report: &SuiteReport) -> CostTable {
    cost_report(
        &report
            .jobs
            .iter()
            .map(|j| CostInput {
                name: &j.name,
                model: j.cost_model,
                task_sizes: &j.task_sizes,
                ledger: &j.metrics.ledger,
            })
            .collect::<Vec<_>>(),
    )
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes all artifacts of a finished suite into `dir`.
pub fn write_run_outputs(dir: &Path, report: &SuiteReport) -> Result<CostTable> {
    fs::create_dir_all(dir)?;
    let cost = suite_cost_table(report);
    for job in &report.jobs {
        let mut w = BufWriter::new(File::create(dir.join(format!("{}.predictions.jsonl", job.name)))?);
        write_prediction_rows(&job.predictions, &mut w)?;
        w.flush()?;
        write_jsonl(&dir.join(format!("{}.trace.jsonl", job.name)), &job.trace)?;
        fs::write(dir.join(format!("{}.positions.csv", job.name)), position_csv(&job.metrics))?;
    }
    fs::write(dir.join("cost.csv"), cost.to_csv())?;
    let summary = RunSummary { report, cost: &cost };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    fs::write(dir.join("summary.json"), text)?;
    Ok(cost)
}

pub fn cmd_run(config_path: &Path, output_dir: Option<&Path>, strict: bool, out: &mut dyn Write) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let dataset = config.load_dataset()?;
    let jobs = config.build_jobs(&dataset)?;
    info!("running {} jobs over {} tasks", jobs.len(), dataset.len());
    let report = run_strategy_suite(&dataset, &jobs, &config.suite_options(strict))?;
    let dir = output_dir.map_or_else(|| config.output_dir.clone(), Path::to_path_buf);
    let cost = write_run_outputs(&dir, &report)?;

    writeln!(out, "{:<24} {:>7} {:>7} {:>7} {:>11} {:>9}", "job", "f1", "prec", "recall", "invocations", "failures")?;
    for job in &report.jobs {
        let m = &job.metrics;
        writeln!(
            out,
            "{:<24} {:>7.4} {:>7.4} {:>7.4} {:>11} {:>9}",
            job.name,
            m.f1,
            m.precision,
            m.recall,
            m.ledger.invocations,
            job.failures.len()
        )?;
    }
    for row in cost.mismatches() {
        writeln!(
            out,
            "warning: {} used {} calls / {} records, closed form predicts {} / {}",
            row.name, row.invocations, row.input_records, row.expected_invocations, row.expected_input_records
        )?;
    }
    writeln!(out, "wrote {}", dir.display())?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct SweepPoint<'a> {
    k: usize,
    metrics: &'a MetricsReport,
}

pub fn cmd_sweep(
    config_path: &Path,
    ks: &[usize],
    job_name: Option<&str>,
    output_dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<i32> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::config("--ks", format!("k={bad}: every k must be >= 1")));
    }
    if ks.is_empty() {
        return Err(Error::config("--ks", "no values given"));
    }
    let config = RunConfig::load(config_path)?;
    let dataset = config.load_dataset()?;
    let jobs = config.build_jobs(&dataset)?;
    let comem: Vec<&Job> = jobs
        .iter()
        .filter(|j| matches!(j.kind, JobKind::Comem(_)) && job_name.is_none_or(|n| n == j.name))
        .collect();
    let job = match (comem.as_slice(), job_name) {
        ([job], _) => *job,
        ([], Some(n)) => return Err(Error::config("--job", format!("no comem job named `{n}`"))),
        ([], None) => return Err(Error::config("jobs", "config has no comem job")),
        (_, _) => return Err(Error::config("--job", "several comem jobs; pick one with --job")),
    };
    let JobKind::Comem(pipeline) = &job.kind else {
        unreachable!()
    };
    let results = sweep_top_k(&dataset, pipeline, ks, &config.suite_options(false))?;

    let dir = output_dir.map_or_else(|| config.output_dir.clone(), Path::to_path_buf);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{}.sweep.csv", job.name)), sweep_csv(&results))?;
    let points: Vec<SweepPoint> = results.iter().map(|(k, m)| SweepPoint { k: *k, metrics: m }).collect();
    let mut text = serde_json::to_string_pretty(&points)?;
    text.push('\n');
    fs::write(dir.join(format!("{}.sweep.json", job.name)), text)?;
    write!(out, "{}", sweep_csv(&results))?;
    Ok(0)
}

pub fn cmd_validate(predictions: &Path, strict: bool, out: &mut dyn Write) -> Result<i32> {
    let rows = read_prediction_rows(BufReader::new(File::open(predictions)?)).map_err(|e| match e {
        Error::Parse { line, message, .. } => Error::Parse {
            path: predictions.to_path_buf(),
            line,
            message,
        },
        e => e,
    })?;
    let report = validate_consistency(&rows);
    writeln!(out, "{} match edges, {} violations", report.match_edges, report.violations.len())?;
    for v in &report.violations {
        let kind = serde_json::to_value(v.kind)?;
        writeln!(out, "  {}: {}", kind.as_str().unwrap_or_default(), v.detail)?;
    }
    Ok(if strict && !report.is_clean() { 1 } else { 0 })
}

pub fn cmd_convert(pairs: &Path, left: &Path, right: &Path, out_path: &Path, out: &mut dyn Write) -> Result<i32> {
    let dataset = load_pair_table(pairs, left, right)?;
    dataset.save_jsonl(out_path)?;
    writeln!(out, "wrote {} tasks to {}", dataset.len(), out_path.display())?;
    Ok(0)
}

/// Dispatches a parsed command line; returns the process exit code.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Run {
            config,
            output_dir,
            strict,
        } => cmd_run(config, output_dir.as_deref(), *strict, out),
        Command::Sweep {
            config,
            ks,
            job,
            output_dir,
        } => cmd_sweep(config, ks, job.as_deref(), output_dir.as_deref(), out),
        Command::Validate { predictions, strict } => cmd_validate(predictions, *strict, out),
        Command::Convert {
            pairs,
            left,
            right,
            out: out_path,
        } => cmd_convert(pairs, left, right, out_path, out),
    }
}
