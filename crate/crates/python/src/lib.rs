//! Python bindings: records, tasks, backends, the strategies, the pipeline
//! and the evaluation helpers.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use em_core::backend::{parse_label as core_parse_label, Label};
use em_core::comem::{run_job, FilterStrategy, Job, JobKind, PipelineConfig, SuiteOptions};
use em_core::eval::{score_predictions, validate_consistency, PredictionRow, PredictionSet};
use em_core::prompts::{ExpectedLabels, PromptSet};
use em_core::records::{load_tasks, serialize_record, DatasetSource};
use em_core::strategies::Strategies;
use em_core::{
    synthetic_dataset, Backend as CoreBackend, Dataset as CoreDataset, EntityRecord, HttpBackend, HttpConfig,
    MatchTask, OracleBackend, OracleConfig, ProbabilityMode, StrategyResult, SynthConfig,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::Serialize;

create_exception!(entity_match, EntityMatchError, PyException);

fn err(e: em_core::Error) -> PyErr {
    EntityMatchError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| EntityMatchError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Record", module = "entity_match", frozen, from_py_object)]
#[derive(Clone)]
struct PyRecord(EntityRecord);

#[pymethods]
impl PyRecord {
    #[new]
    #[pyo3(signature = (id, attributes, source = "D1"))]
    fn new(id: &str, attributes: Vec<(String, String)>, source: &str) -> PyResult<Self> {
        EntityRecord::new(id, source, attributes).map(Self).map_err(err)
    }

    #[getter]
    fn id(&self) -> &str {
        &self.0.id
    }

    #[getter]
    fn source(&self) -> &str {
        &self.0.source
    }

    #[getter]
    fn attributes(&self) -> Vec<(String, String)> {
        self.0.attributes().to_vec()
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0.get(name)
    }

    fn serialize(&self) -> String {
        serialize_record(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("Record({:?}, {:?})", self.0.id, serialize_record(&self.0))
    }
}

#[pyclass(name = "Task", module = "entity_match", frozen, from_py_object)]
#[derive(Clone)]
struct PyTask(MatchTask);

#[pymethods]
impl PyTask {
    #[new]
    #[pyo3(signature = (task_id, anchor, candidates, gold = None))]
    fn new(task_id: &str, anchor: PyRecord, candidates: Vec<PyRecord>, gold: Option<usize>) -> PyResult<Self> {
        MatchTask::new(task_id, anchor.0, candidates.into_iter().map(|c| c.0).collect(), gold)
            .map(Self)
            .map_err(err)
    }

    #[getter]
    fn task_id(&self) -> &str {
        &self.0.task_id
    }

    #[getter]
    fn anchor(&self) -> PyRecord {
        PyRecord(self.0.anchor.clone())
    }

    #[getter]
    fn candidates(&self) -> Vec<PyRecord> {
        self.0.candidates().iter().cloned().map(PyRecord).collect()
    }

    #[getter]
    fn gold(&self) -> Option<usize> {
        self.0.gold()
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    fn __repr__(&self) -> String {
        format!("Task({:?}, n={}, gold={:?})", self.0.task_id, self.0.n(), self.0.gold())
    }
}

#[pyclass(name = "Dataset", module = "entity_match", frozen)]
struct PyDataset(CoreDataset);

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (tasks, name = "dataset"))]
    fn new(tasks: Vec<PyTask>, name: &str) -> PyResult<Self> {
        CoreDataset::new(name, tasks.into_iter().map(|t| t.0).collect())
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_tasks(&DatasetSource::TaskJsonl(path)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load_pair_table(pairs: PathBuf, left: PathBuf, right: PathBuf) -> PyResult<Self> {
        load_tasks(&DatasetSource::PairTable { pairs, left, right })
            .map(Self)
            .map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (tasks = 400, with_gold = 300, candidates = 10, seed = 7))]
    fn synthetic(tasks: usize, with_gold: usize, candidates: usize, seed: u64) -> PyResult<Self> {
        synthetic_dataset(&SynthConfig { tasks, with_gold, candidates, seed })
            .map(Self)
            .map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save_jsonl(&path).map_err(err)
    }

    #[getter]
    fn name(&self) -> &str {
        &self.0.name
    }

    #[getter]
    fn tasks(&self) -> Vec<PyTask> {
        self.0.tasks().iter().cloned().map(PyTask).collect()
    }

    fn task(&self, task_id: &str) -> Option<PyTask> {
        self.0.task(task_id).cloned().map(PyTask)
    }

    fn summary<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.summary())
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyclass(name = "Backend", module = "entity_match", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyBackend(Arc<dyn CoreBackend>);

#[pymethods]
impl PyBackend {
    /// Deterministic simulator that knows the dataset's true matches.
    #[staticmethod]
    #[pyo3(signature = (dataset, seed = 0, flip_rate = 0.0, position_bias = None, calibrated = false))]
    fn oracle(
        dataset: &PyDataset,
        seed: u64,
        flip_rate: f64,
        position_bias: Option<Vec<f64>>,
        calibrated: bool,
    ) -> PyResult<Self> {
        let config = OracleConfig {
            seed,
            flip_rate,
            position_bias,
            probability_mode: if calibrated { ProbabilityMode::Calibrated } else { ProbabilityMode::None },
        };
        let o = OracleBackend::for_dataset(config, &dataset.0).map_err(err)?;
        Ok(Self(Arc::new(o)))
    }

    /// OpenAI-compatible chat-completions endpoint.
    #[staticmethod]
    #[pyo3(signature = (endpoint, model, api_key = None, want_probabilities = false, parallelism = 4, max_retries = 3, timeout_secs = 120))]
    fn http(
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        want_probabilities: bool,
        parallelism: usize,
        max_retries: u32,
        timeout_secs: u64,
    ) -> Self {
        let mut c = HttpConfig::new(endpoint, model);
        c.api_key = api_key;
        c.want_probabilities = want_probabilities;
        c.parallelism = parallelism;
        c.max_retries = max_retries;
        c.timeout_secs = timeout_secs;
        Self(Arc::new(HttpBackend::new(c)))
    }

    #[getter]
    fn model_name(&self) -> String {
        self.0.model_name().to_string()
    }

    #[getter]
    fn wants_probabilities(&self) -> bool {
        self.0.wants_probabilities()
    }
}

#[pyclass(name = "StrategyResult", module = "entity_match", frozen)]
struct PyResult_(StrategyResult);

#[pymethods]
impl PyResult_ {
    #[getter]
    fn prediction(&self) -> Option<usize> {
        self.0.prediction
    }

    #[getter]
    fn scores(&self) -> Option<Vec<(usize, f64)>> {
        self.0
            .scores
            .as_ref()
            .map(|s| s.iter().map(|c| (c.index, c.score)).collect())
    }

    #[getter]
    fn ranking(&self) -> Option<Vec<usize>> {
        self.0.ranking.clone()
    }

    #[getter]
    fn invocations(&self) -> u64 {
        self.0.ledger.invocations
    }

    #[getter]
    fn input_records(&self) -> u64 {
        self.0.ledger.input_records
    }

    #[getter]
    fn tokens(&self) -> u64 {
        self.0.ledger.tokens()
    }

    #[getter]
    fn cost(&self) -> f64 {
        self.0.ledger.cost
    }

    /// `(stage, invocations, input_records)` per stage.
    #[getter]
    fn stages(&self) -> Vec<(String, u64, u64)> {
        self.0
            .stages
            .iter()
            .map(|s| (s.stage.clone(), s.ledger.invocations, s.ledger.input_records))
            .collect()
    }

    fn trace<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.trace)
    }

    fn __repr__(&self) -> String {
        format!(
            "StrategyResult(prediction={:?}, invocations={}, input_records={})",
            self.0.prediction, self.0.ledger.invocations, self.0.ledger.input_records
        )
    }
}

fn strategies() -> Strategies {
    Strategies::default()
}

fn wrap(r: em_core::Result<StrategyResult>) -> PyResult<PyResult_> {
    r.map(PyResult_).map_err(err)
}

#[pyfunction]
fn render_matching(left: &PyRecord, right: &PyRecord) -> String {
    PromptSet::default().render_matching(&left.0, &right.0, &[]).text
}

#[pyfunction]
fn render_comparing(anchor: &PyRecord, left: &PyRecord, right: &PyRecord) -> String {
    PromptSet::default().render_comparing(&anchor.0, &left.0, &right.0).text
}

#[pyfunction]
#[pyo3(signature = (anchor, candidates, allow_none = true))]
fn render_selecting(anchor: &PyRecord, candidates: Vec<PyRecord>, allow_none: bool) -> PyResult<String> {
    let cands: Vec<EntityRecord> = candidates.into_iter().map(|c| c.0).collect();
    PromptSet::default()
        .render_selecting(&anchor.0, &cands, allow_none)
        .map(|p| p.text)
        .map_err(err)
}

/// Parses a raw answer. Returns `(label, parse_ok)` where label is "yes",
/// "no", "a", "b" or an integer index.
#[pyfunction]
#[pyo3(signature = (text, strategy, n = None, allow_none = true))]
fn parse_label<'py>(
    py: Python<'py>,
    text: &str,
    strategy: &str,
    n: Option<usize>,
    allow_none: bool,
) -> PyResult<(Bound<'py, PyAny>, bool)> {
    let expected = match strategy {
        "matching" => ExpectedLabels::YesNo,
        "comparing" => ExpectedLabels::RecordAB,
        "selecting" => ExpectedLabels::Index {
            n: n.ok_or_else(|| EntityMatchError::new_err("selecting needs n"))?,
            allow_none,
        },
        other => return Err(EntityMatchError::new_err(format!("unknown strategy `{other}`"))),
    };
    let parsed = core_parse_label(text, &expected);
    let label = match parsed.label {
        Label::Yes => "yes".into_pyobject(py)?.into_any(),
        Label::No => "no".into_pyobject(py)?.into_any(),
        Label::A => "a".into_pyobject(py)?.into_any(),
        Label::B => "b".into_pyobject(py)?.into_any(),
        Label::Index(i) => i.into_pyobject(py)?.into_any(),
    };
    Ok((label, parsed.parse_ok))
}

#[pyfunction]
fn match_pairwise(task: &PyTask, backend: &PyBackend) -> PyResult<PyResult_> {
    wrap(strategies().match_pairwise(&task.0, &backend.0, &[]))
}

#[pyfunction]
fn compare_all_pairs(task: &PyTask, backend: &PyBackend) -> PyResult<PyResult_> {
    wrap(strategies().compare_all_pairs(&task.0, &backend.0))
}

#[pyfunction]
fn compare_bubble_topk(task: &PyTask, backend: &PyBackend, k: usize) -> PyResult<PyResult_> {
    wrap(strategies().compare_bubble_topk(&task.0, &backend.0, k))
}

#[pyfunction]
fn compare_then_match(task: &PyTask, backend: &PyBackend) -> PyResult<PyResult_> {
    wrap(strategies().compare_then_match(&task.0, &backend.0))
}

#[pyfunction]
#[pyo3(signature = (task, backend, allow_none = true))]
fn select_from_list(task: &PyTask, backend: &PyBackend, allow_none: bool) -> PyResult<PyResult_> {
    wrap(strategies().select_from_list(&task.0, &backend.0, allow_none))
}

fn pipeline(
    filter_backend: &PyBackend,
    select_backend: &PyBackend,
    top_k: usize,
    filter: &str,
    allow_none: bool,
) -> PyResult<PipelineConfig> {
    let filter_strategy = match filter {
        "matching" => FilterStrategy::Matching,
        "comparing_bubble" => FilterStrategy::ComparingBubble,
        other => return Err(EntityMatchError::new_err(format!("unknown filter `{other}`"))),
    };
    Ok(PipelineConfig {
        filter_strategy,
        filter_backend: filter_backend.0.clone(),
        top_k,
        select_backend: select_backend.0.clone(),
        allow_none,
    })
}

#[pyfunction]
#[pyo3(signature = (task, filter_backend, select_backend, top_k = 4, filter = "matching", allow_none = true))]
fn run_comem(
    task: &PyTask,
    filter_backend: &PyBackend,
    select_backend: &PyBackend,
    top_k: usize,
    filter: &str,
    allow_none: bool,
) -> PyResult<PyResult_> {
    let cfg = pipeline(filter_backend, select_backend, top_k, filter, allow_none)?;
    wrap(em_core::run_comem(&task.0, &cfg))
}

/// Runs one strategy over a whole dataset. `strategy` is one of "matching",
/// "compare_then_match", "selecting" or "comem"; for "comem" the backend
/// filters and `select_backend` (default: same) selects.
#[pyfunction]
#[pyo3(signature = (dataset, strategy, backend, select_backend = None, top_k = 4, filter = "matching", allow_none = true, parallelism = 1))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    strategy: &str,
    backend: &PyBackend,
    select_backend: Option<&PyBackend>,
    top_k: usize,
    filter: &str,
    allow_none: bool,
    parallelism: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let b = backend.0.clone();
    let kind = match strategy {
        "matching" => JobKind::Matching { backend: b, fewshot: None },
        "compare_then_match" => JobKind::Comparing { backend: b },
        "selecting" => JobKind::Selecting { backend: b, allow_none },
        "comem" => JobKind::Comem(pipeline(backend, select_backend.unwrap_or(backend), top_k, filter, allow_none)?),
        other => return Err(EntityMatchError::new_err(format!("unknown strategy `{other}`"))),
    };
    let job = Job { name: strategy.to_string(), kind };
    let options = SuiteOptions { parallelism, strict: true };
    let report = py.detach(|| run_job(&dataset.0, &job, &options)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("metrics", to_py(py, &report.metrics)?)?;
    let preds = PyDict::new(py);
    for row in &report.predictions {
        preds.set_item(&row.task_id, row.prediction)?;
    }
    out.set_item("predictions", preds)?;
    Ok(out)
}

/// Pairwise precision / recall / F1 of `{task_id: index or None}`.
#[pyfunction]
fn score<'py>(
    py: Python<'py>,
    dataset: &PyDataset,
    predictions: BTreeMap<String, Option<usize>>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut set = PredictionSet::default();
    for (task_id, p) in predictions {
        set.insert(task_id, p);
    }
    let report = score_predictions(&dataset.0, &set).map_err(err)?;
    to_py(py, &report)
}

/// Consistency check over `(anchor_id, predicted_id or None)` matches.
#[pyfunction]
fn validate<'py>(py: Python<'py>, matches: Vec<(String, Option<String>)>) -> PyResult<Bound<'py, PyAny>> {
    let rows: Vec<PredictionRow> = matches
        .into_iter()
        .enumerate()
        .map(|(i, (anchor, predicted))| PredictionRow {
            task_id: i.to_string(),
            anchor_id: anchor,
            prediction: predicted.as_ref().map(|_| 1),
            predicted_id: predicted,
            candidate_ids: Vec::new(),
        })
        .collect();
    to_py(py, &validate_consistency(&rows))
}

#[pymodule]
fn entity_match(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EntityMatchError", m.py().get_type::<EntityMatchError>())?;
    m.add_class::<PyRecord>()?;
    m.add_class::<PyTask>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyBackend>()?;
    m.add_class::<PyResult_>()?;
    m.add_function(wrap_pyfunction!(render_matching, m)?)?;
    m.add_function(wrap_pyfunction!(render_comparing, m)?)?;
    m.add_function(wrap_pyfunction!(render_selecting, m)?)?;
    m.add_function(wrap_pyfunction!(parse_label, m)?)?;
    m.add_function(wrap_pyfunction!(match_pairwise, m)?)?;
    m.add_function(wrap_pyfunction!(compare_all_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(compare_bubble_topk, m)?)?;
    m.add_function(wrap_pyfunction!(compare_then_match, m)?)?;
    m.add_function(wrap_pyfunction!(select_from_list, m)?)?;
    m.add_function(wrap_pyfunction!(run_comem, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    Ok(())
}
