//! LLM-driven entity matching: matching, comparing and selecting strategies,
//! the two-stage filter-then-select pipeline, and evaluation tooling.

pub mod backend;
pub mod cli;
pub mod comem;
pub mod error;
pub mod eval;
pub mod prompts;
pub mod records;
pub mod strategies;
pub mod synth;

pub use backend::{
    Backend, BackendRequest, BackendResponse, CostLedger, HttpBackend, HttpConfig, Label, OracleBackend, OracleConfig,
    PriceTable, ProbabilityMode,
};
pub use comem::{run_comem, run_job, run_strategy_suite, FilterStrategy, Job, JobKind, PipelineConfig, SuiteOptions};
pub use error::{Error, Result};
pub use eval::{score_predictions, validate_consistency, CostModel, MetricsReport, PredictionRow, PredictionSet};
pub use prompts::{PromptSet, RenderedPrompt, Strategy};
pub use records::{Dataset, EntityRecord, FewShotExample, MatchTask};
pub use strategies::{Strategies, StrategyResult};
pub use synth::{synthetic_dataset, SynthConfig};
