//! LLM backends: the completion interface, label parsing and usage
//! accounting. Two implementations ship: [`HttpBackend`] for
//! chat-completions services and [`OracleBackend`], a deterministic
//! simulator that answers from ground truth.

mod http;
mod labels;
mod ledger;
mod oracle;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

pub use http::{HttpBackend, HttpConfig};
pub use labels::{parse_label, Label, ParsedLabel};
pub use ledger::{account_usage, estimate_tokens, CostLedger, PriceTable};
pub use oracle::{OracleBackend, OracleConfig, ProbabilityMode};

use crate::error::Result;
use crate::prompts::RenderedPrompt;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendRequest {
    pub task_id: String,
    pub prompt: RenderedPrompt,
    temperature: f64,
    pub want_probabilities: bool,
    pub model_name: String,
}

impl BackendRequest {
    pub fn new(
        task_id: impl Into<String>,
        prompt: RenderedPrompt,
        model_name: impl Into<String>,
        want_probabilities: bool,
    ) -> Self {
        Self {
            task_id: task_id.into(),
            prompt,
            temperature: 0.0,
            want_probabilities,
            model_name: model_name.into(),
        }
    }

    /// Always zero: greedy decoding keeps runs reproducible.
    pub fn temperature(&self) -> f64 {
        self.temperature
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BackendResponse {
    pub text: String,
    /// Per-label probabilities when the service exposes them.
    pub label_probs: Option<BTreeMap<Label, f64>>,
    pub usage: Option<Usage>,
}

impl BackendResponse {
    pub fn prob(&self, label: Label) -> Option<f64> {
        self.label_probs.as_ref().and_then(|m| m.get(&label).copied())
    }
}

pub trait Backend: Send + Sync {
    fn model_name(&self) -> &str;

    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse>;

    fn wants_probabilities(&self) -> bool {
        false
    }

    fn price(&self) -> PriceTable {
        PriceTable::default()
    }

    fn request(&self, task_id: &str, prompt: RenderedPrompt) -> BackendRequest {
        BackendRequest::new(task_id, prompt, self.model_name(), self.wants_probabilities())
    }
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn model_name(&self) -> &str {
        (**self).model_name()
    }

    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse> {
        (**self).complete(request)
    }

    fn wants_probabilities(&self) -> bool {
        (**self).wants_probabilities()
    }

    fn price(&self) -> PriceTable {
        (**self).price()
    }
}

/// Backend driven by a closure; handy for scripted scenarios.
pub struct FnBackend<F> {
    name: String,
    f: F,
}

impl<F> FnBackend<F>
where
    F: Fn(&BackendRequest) -> Result<BackendResponse> + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> Backend for FnBackend<F>
where
    F: Fn(&BackendRequest) -> Result<BackendResponse> + Send + Sync,
{
    fn model_name(&self) -> &str {
        &self.name
    }

    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse> {
        (self.f)(request)
    }
}

/// Normalizes probabilities over the given labels. Returns `None` when none
/// of them carry mass.
pub(crate) fn renormalize(probs: &BTreeMap<Label, f64>, labels: &[Label]) -> Option<BTreeMap<Label, f64>> {
    let total: f64 = labels.iter().filter_map(|l| probs.get(l)).sum();
    if total.is_nan() || total <= 0.0 {
        return None;
    }
    Some(
        labels
            .iter()
            .map(|l| (*l, probs.get(l).copied().unwrap_or(0.0) / total))
            .collect(),
    )
}
