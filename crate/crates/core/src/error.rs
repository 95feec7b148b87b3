use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate task_id `{0}`")]
    DuplicateTaskId(String),

    #[error("task `{task_id}`: gold index {gold} out of range 1..={n}")]
    GoldOutOfRange { task_id: String, gold: usize, n: usize },

    #[error("record `{record}`: duplicate attribute `{name}`")]
    DuplicateAttribute { record: String, name: String },

    #[error("invalid task `{task_id}`: {message}")]
    InvalidTask { task_id: String, message: String },

    #[error("few-shot pool has {available} {class} examples, {requested} requested")]
    InsufficientPool {
        class: &'static str,
        available: usize,
        requested: usize,
    },

    #[error("selecting prompt needs at least one candidate")]
    EmptyCandidates,

    #[error("template error: {0}")]
    Template(String),

    #[error("http status {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("retry budget exhausted after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },

    #[error("transport error: {0}")]
    Transport(String),

    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    #[error("oracle has no ground truth for task `{0}`")]
    UnknownTask(String),

    #[error("task `{task_id}`{}: {source}", .stage.map(|s| format!(" ({s} stage)")).unwrap_or_default())]
    Task {
        task_id: String,
        stage: Option<&'static str>,
        #[source]
        source: Box<Error>,
    },

    #[error("task `{task_id}`, {call}: {source}")]
    Call {
        task_id: String,
        call: String,
        #[source]
        source: Box<Error>,
    },

    #[error("predictions missing for tasks: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),

    #[error("prediction for unknown task `{0}`")]
    UnknownPrediction(String),

    #[error("invalid k={0}: must be >= 1")]
    InvalidK(usize),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn in_task(self, task_id: &str, stage: Option<&'static str>) -> Self {
        match self {
            // don't double-wrap when a nested strategy already attributed the task
            Error::Task { .. } | Error::Call { .. } if stage.is_none() => self,
            other => Error::Task {
                task_id: task_id.to_string(),
                stage,
                source: Box::new(other),
            },
        }
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
