//! Scoring, cost accounting and consistency checks.
//!
//! F1 is computed pairwise: every task expands into its n (anchor, candidate)
//! pairs, a pair is positive iff it is the gold candidate, and predicted
//! positive iff it is the predicted candidate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::backend::CostLedger;
use crate::comem::{run_job, FilterStrategy, Job, JobKind, PipelineConfig, SuiteOptions};
use crate::error::{Error, Result};
use crate::records::{Dataset, MatchTask};

pub const F1_PROTOCOL: &str = "pairwise: each task expands into n (anchor, candidate) pairs";

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub task_id: String,
    pub anchor_id: String,
    pub prediction: Option<usize>,
    pub predicted_id: Option<String>,
    /// Presented candidates; lets the validator tell whether a pair was
    /// judged in both directions.
    #[serde(default)]
    pub candidate_ids: Vec<String>,
}

impl PredictionRow {
    pub fn from_task(task: &MatchTask, prediction: Option<usize>) -> Self {
        Self {
            task_id: task.task_id.clone(),
            anchor_id: task.anchor.id.clone(),
            prediction,
            predicted_id: prediction.map(|i| task.candidate(i).id.clone()),
            candidate_ids: task.candidates().iter().map(|c| c.id.clone()).collect(),
        }
    }
}

pub fn write_prediction_rows<W: Write>(rows: &[PredictionRow], mut w: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_prediction_rows<R: BufRead>(reader: R) -> Result<Vec<PredictionRow>> {
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: "<predictions>".into(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet {
    pub entries: BTreeMap<String, Option<usize>>,
}

impl PredictionSet {
    pub fn from_rows(rows: &[PredictionRow]) -> Self {
        Self {
            entries: rows
                .iter()
                .map(|r| (r.task_id.clone(), r.prediction))
                .collect(),
        }
    }

    pub fn insert(&mut self, task_id: impl Into<String>, prediction: Option<usize>) {
        self.entries.insert(task_id.into(), prediction);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    /// Pairwise counts for one task.
    pub fn of_task(gold: Option<usize>, prediction: Option<usize>) -> Self {
        match (gold, prediction) {
            (Some(g), Some(p)) if g == p => Confusion { tp: 1, fp: 0, fn_: 0 },
            (Some(_), Some(_)) => Confusion { tp: 0, fp: 1, fn_: 1 },
            (Some(_), None) => Confusion { tp: 0, fp: 0, fn_: 1 },
            (None, Some(_)) => Confusion { tp: 0, fp: 1, fn_: 0 },
            (None, None) => Confusion::default(),
        }
    }

    fn add(&mut self, other: Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PositionBucket {
    pub tasks: usize,
    #[serde(flatten)]
    pub counts: Confusion,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub protocol: &'static str,
    pub tasks: usize,
    #[serde(flatten)]
    pub counts: Confusion,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Keyed by 1-based gold position; goldless tasks are not bucketed.
    pub by_position: BTreeMap<usize, PositionBucket>,
    pub goldless_tasks: usize,
    pub goldless_fp: u64,
    pub ledger: CostLedger,
}

pub fn score_predictions(dataset: &Dataset, preds: &PredictionSet) -> Result<MetricsReport> {
    let missing: Vec<String> = dataset
        .tasks()
        .iter()
        .filter(|t| !preds.entries.contains_key(&t.task_id))
        .map(|t| t.task_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    let by_id: HashMap<&str, &MatchTask> = dataset.tasks().iter().map(|t| (t.task_id.as_str(), t)).collect();
    if let Some(extra) = preds.entries.keys().find(|k| !by_id.contains_key(k.as_str())) {
        return Err(Error::UnknownPrediction(extra.clone()));
    }

    let mut total = Confusion::default();
    let mut buckets: BTreeMap<usize, (usize, Confusion)> = BTreeMap::new();
    let mut goldless = (0usize, 0u64);
    for task in dataset.tasks() {
        let prediction = preds.entries[&task.task_id];
        if let Some(p) = prediction {
            if p == 0 || p > task.n() {
                return Err(Error::InvalidTask {
                    task_id: task.task_id.clone(),
                    message: format!("prediction {p} outside 1..={}", task.n()),
                });
            }
        }
        let c = Confusion::of_task(task.gold(), prediction);
        total.add(c);
        match task.gold() {
            Some(g) => {
                let b = buckets.entry(g).or_default();
                b.0 += 1;
                b.1.add(c);
            }
            None => {
                goldless.0 += 1;
                goldless.1 += c.fp;
            }
        }
    }

    Ok(MetricsReport {
        protocol: F1_PROTOCOL,
        tasks: dataset.len(),
        counts: total,
        precision: total.precision(),
        recall: total.recall(),
        f1: total.f1(),
        by_position: buckets
            .into_iter()
            .map(|(pos, (tasks, counts))| {
                (
                    pos,
                    PositionBucket {
                        tasks,
                        counts,
                        f1: counts.f1(),
                    },
                )
            })
            .collect(),
        goldless_tasks: goldless.0,
        goldless_fp: goldless.1,
        ledger: CostLedger::default(),
    })
}

/// Runs the pipeline once per `k`.
pub fn sweep_top_k(
    dataset: &Dataset,
    config: &PipelineConfig,
    ks: &[usize],
    options: &SuiteOptions,
) -> Result<Vec<(usize, MetricsReport)>> {
    if let Some(&bad) = ks.iter().find(|&&k| k == 0) {
        return Err(Error::InvalidK(bad));
    }
    ks.iter()
        .map(|&k| {
            let job = Job {
                name: format!("comem_k{k}"),
                kind: JobKind::Comem(PipelineConfig {
                    top_k: k,
                    ..config.clone()
                }),
            };
            run_job(dataset, &job, options).map(|r| (k, r.metrics))
        })
        .collect()
}

pub fn position_csv(report: &MetricsReport) -> String {
    let mut out = String::from("position,tasks,tp,fp,fn,f1\n");
    for (pos, b) in &report.by_position {
        let _ = writeln!(
            out,
            "{pos},{},{},{},{},{:.6}",
            b.tasks, b.counts.tp, b.counts.fp, b.counts.fn_, b.f1
        );
    }
    out
}

pub fn sweep_csv(results: &[(usize, MetricsReport)]) -> String {
    let mut out = String::from("k,f1,precision,recall\n");
    for (k, m) in results {
        let _ = writeln!(out, "{k},{:.6},{:.6},{:.6}", m.f1, m.precision, m.recall);
    }
    out
}

// ---------------------------------------------------------------------------
// consistency

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Symmetry,
    MutualExclusivity,
    Transitivity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub records: Vec<String>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ConsistencyReport {
    pub match_edges: usize,
    pub violations: Vec<Violation>,
}

impl ConsistencyReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks predicted matches for symmetry, one-to-one and transitivity
/// violations. Reflexivity holds trivially and is not checked.
///
/// * symmetry: `A -> B` while B was also an anchor with A among its
///   candidates, and B did not pick A;
/// * mutual exclusivity: an anchor matched to two or more distinct records;
/// * transitivity: a connected component of the undirected match graph that
///   is not a clique. Components already flagged for mutual exclusivity are
///   not reported again.
pub fn validate_consistency(rows: &[PredictionRow]) -> ConsistencyReport {
    let mut edges: BTreeSet<(String, String)> = BTreeSet::new();
    for r in rows {
        if let Some(to) = &r.predicted_id {
            if *to != r.anchor_id {
                edges.insert((r.anchor_id.clone(), to.clone()));
            }
        }
    }
    let mut violations = Vec::new();

    let mut as_anchor: HashMap<&str, Vec<&PredictionRow>> = HashMap::new();
    for r in rows {
        as_anchor.entry(r.anchor_id.as_str()).or_default().push(r);
    }
    for (a, b) in &edges {
        let reverse_judged = as_anchor
            .get(b.as_str())
            .into_iter()
            .flatten()
            .filter(|r| r.candidate_ids.iter().any(|c| c == a))
            .collect::<Vec<_>>();
        if !reverse_judged.is_empty() && reverse_judged.iter().all(|r| r.predicted_id.as_deref() != Some(a)) {
            violations.push(Violation {
                kind: ViolationKind::Symmetry,
                records: vec![a.clone(), b.clone()],
                detail: format!("{a} matches {b}, but {b} does not match {a}"),
            });
        }
    }

    let mut out_edges: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, b) in &edges {
        out_edges.entry(a.as_str()).or_default().push(b.as_str());
    }
    let mut exclusive_broken: BTreeSet<&str> = BTreeSet::new();
    for (a, targets) in &out_edges {
        if targets.len() >= 2 {
            exclusive_broken.insert(a);
            let mut records = vec![a.to_string()];
            records.extend(targets.iter().map(|t| t.to_string()));
            violations.push(Violation {
                kind: ViolationKind::MutualExclusivity,
                records,
                detail: format!("{a} matches {} records: {}", targets.len(), targets.join(", ")),
            });
        }
    }

    // undirected components
    let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (a, b) in &edges {
        adj.entry(a.as_str()).or_default().insert(b.as_str());
        adj.entry(b.as_str()).or_default().insert(a.as_str());
    }
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for &start in adj.keys() {
        if !seen.insert(start) {
            continue;
        }
        let mut component = vec![start];
        let mut stack = vec![start];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if seen.insert(w) {
                    component.push(w);
                    stack.push(w);
                }
            }
        }
        let k = component.len();
        let undirected_edges: usize = component.iter().map(|v| adj[v].len()).sum::<usize>() / 2;
        if undirected_edges == k * (k - 1) / 2 {
            continue;
        }
        if component.iter().any(|v| exclusive_broken.contains(v)) {
            continue;
        }
        component.sort_unstable();
        violations.push(Violation {
            kind: ViolationKind::Transitivity,
            records: component.iter().map(|s| s.to_string()).collect(),
            detail: format!(
                "{} records linked by {undirected_edges} matches; transitive closure needs {}",
                k,
                k * (k - 1) / 2
            ),
        });
    }

    violations.sort_by(|a, b| a.kind.cmp(&b.kind).then_with(|| a.records.cmp(&b.records)));
    ConsistencyReport {
        match_edges: edges.len(),
        violations,
    }
}

// ---------------------------------------------------------------------------
// cost

/// Closed-form invocation and input-record counts per task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum CostModel {
    Matching { shots: usize },
    ComparingAllPairs,
    ComparingBubble { k: usize },
    CompareThenMatch,
    Selecting,
    Comem { filter: FilterStrategy, top_k: usize },
}

fn bubble(n: u64, k: u64) -> u64 {
    k * (2 * n - k - 1)
}

impl CostModel {
    /// (invocations, input records) for one task with `n` candidates.
    pub fn expected(&self, n: usize) -> (u64, u64) {
        let n = n as u64;
        match *self {
            CostModel::Matching { shots } => (n, n * (2 + 2 * shots as u64)),
            CostModel::ComparingAllPairs => (n * (n - 1), 3 * n * (n - 1)),
            CostModel::ComparingBubble { k } => {
                let calls = bubble(n, k as u64);
                (calls, 3 * calls)
            }
            CostModel::CompareThenMatch => {
                let calls = bubble(n, 1);
                (calls + 1, 3 * calls + 2)
            }
            CostModel::Selecting => (1, n + 1),
            CostModel::Comem { filter, top_k } => {
                let k = (top_k as u64).min(n);
                let (calls, records) = match filter {
                    FilterStrategy::Matching => (n, 2 * n),
                    FilterStrategy::ComparingBubble => (bubble(n, k), 3 * bubble(n, k)),
                };
                (calls + 1, records + k + 1)
            }
        }
    }

    pub fn expected_total(&self, task_sizes: &[usize]) -> (u64, u64) {
        task_sizes.iter().fold((0, 0), |(c, r), &n| {
            let (dc, dr) = self.expected(n);
            (c + dc, r + dr)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub name: String,
    pub tasks: usize,
    pub invocations: u64,
    pub expected_invocations: u64,
    pub input_records: u64,
    pub expected_input_records: u64,
    pub tokens: u64,
    pub cost: f64,
    pub matches_closed_form: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostTable {
    pub rows: Vec<CostRow>,
}

impl CostTable {
    pub fn mismatches(&self) -> impl Iterator<Item = &CostRow> {
        self.rows.iter().filter(|r| !r.matches_closed_form)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "strategy,tasks,invocations,expected_invocations,input_records,expected_input_records,tokens,cost,matches_closed_form\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{:.6},{}",
                r.name,
                r.tasks,
                r.invocations,
                r.expected_invocations,
                r.input_records,
                r.expected_input_records,
                r.tokens,
                r.cost,
                r.matches_closed_form
            );
        }
        out
    }
}

pub struct CostInput<'a> {
    pub name: &'a str,
    pub model: CostModel,
    pub task_sizes: &'a [usize],
    pub ledger: &'a CostLedger,
}

pub fn cost_report(inputs: &[CostInput<'_>]) -> CostTable {
    CostTable {
        rows: inputs
            .iter()
            .map(|i| {
                let (calls, records) = i.model.expected_total(i.task_sizes);
                CostRow {
                    name: i.name.to_string(),
                    tasks: i.task_sizes.len(),
                    invocations: i.ledger.invocations,
                    expected_invocations: calls,
                    input_records: i.ledger.input_records,
                    expected_input_records: records,
                    tokens: i.ledger.tokens(),
                    cost: i.ledger.cost,
                    matches_closed_form: calls == i.ledger.invocations && records == i.ledger.input_records,
                }
            })
            .collect(),
    }
}
