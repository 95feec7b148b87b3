//! Deterministic ground-truth simulator.
//!
//! Every answer is a pure function of the seed, the task and the records in
//! the prompt (in presentation order), so results never depend on call
//! scheduling. Noise is injected per call through a SHA-256 derived uniform
//! draw.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Backend, BackendRequest, BackendResponse, Label};
use crate::error::{Error, Result};
use crate::prompts::{ExpectedLabels, RenderedPrompt};
use crate::records::Dataset;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityMode {
    #[default]
    None,
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default)]
    pub seed: u64,
    /// Probability of answering against the truth (matching, comparing and
    /// selecting without a schedule).
    #[serde(default)]
    pub flip_rate: f64,
    /// Selecting accuracy by 1-based gold position in the presented list.
    /// Positions past the end reuse the last entry.
    #[serde(default)]
    pub position_bias: Option<Vec<f64>>,
    #[serde(default)]
    pub probability_mode: ProbabilityMode,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            flip_rate: 0.0,
            position_bias: None,
            probability_mode: ProbabilityMode::None,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.flip_rate) {
            return Err(Error::config("flip_rate", "must be within [0, 1]"));
        }
        if let Some(schedule) = &self.position_bias {
            if schedule.is_empty() {
                return Err(Error::config("position_bias", "schedule is empty"));
            }
            if let Some(bad) = schedule.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::config(
                    "position_bias",
                    format!("accuracy {bad} outside [0, 1]"),
                ));
            }
        }
        Ok(())
    }

    /// Accuracy decaying linearly from `first` at position 1 to `last` at
    /// position `len`.
    pub fn linear_schedule(first: f64, last: f64, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![first];
        }
        (0..len)
            .map(|i| first + (last - first) * i as f64 / (len - 1) as f64)
            .collect()
    }
}

pub struct OracleBackend {
    config: OracleConfig,
    name: String,
    /// task id -> id of the true match (None when the anchor has none)
    truth: HashMap<String, Option<String>>,
}

impl OracleBackend {
    pub fn new(config: OracleConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            name: "oracle".into(),
            truth: HashMap::new(),
        })
    }

    pub fn for_dataset(config: OracleConfig, dataset: &Dataset) -> Result<Self> {
        let mut oracle = Self::new(config)?;
        oracle.register_dataset(dataset);
        Ok(oracle)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn register(&mut self, task_id: impl Into<String>, gold_id: Option<String>) {
        self.truth.insert(task_id.into(), gold_id);
    }

    pub fn register_dataset(&mut self, dataset: &Dataset) {
        for t in dataset.tasks() {
            self.register(t.task_id.clone(), t.gold_record().map(|r| r.id.clone()));
        }
    }

    fn unit(&self, task_id: &str, parts: &[&str]) -> f64 {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        for p in std::iter::once(&task_id).chain(parts.iter()) {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p.as_bytes());
        }
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        (u64::from_le_bytes(bytes) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Latent similarity: the gold record outranks everything, the rest are
    /// ordered by a per-record draw that ignores presentation order.
    fn latent(&self, task_id: &str, gold: Option<&str>, record_id: &str) -> f64 {
        if gold == Some(record_id) {
            2.0
        } else {
            self.unit(task_id, &["latent", record_id])
        }
    }

    fn answer(&self, task_id: &str, gold: Option<&str>, prompt: &RenderedPrompt) -> Label {
        let flip = |kind: &str, ids: &[&str]| {
            let mut parts = vec![kind, "flip"];
            parts.extend_from_slice(ids);
            self.unit(task_id, &parts) < self.config.flip_rate
        };
        match prompt.expected {
            ExpectedLabels::YesNo => {
                let cand = prompt.candidate_ids[0].as_str();
                let truth = gold == Some(cand);
                if truth ^ flip("matching", &[&prompt.anchor_id, cand]) {
                    Label::Yes
                } else {
                    Label::No
                }
            }
            ExpectedLabels::RecordAB => {
                let (l, r) = (prompt.candidate_ids[0].as_str(), prompt.candidate_ids[1].as_str());
                let a_wins = self.latent(task_id, gold, l) >= self.latent(task_id, gold, r);
                // the discriminator is ordered, so the two swapped calls flip independently
                if a_wins ^ flip("comparing", &[l, r]) {
                    Label::A
                } else {
                    Label::B
                }
            }
            ExpectedLabels::Index { n, allow_none } => {
                let ids = &prompt.candidate_ids;
                let gold_pos = gold
                    .and_then(|g| ids.iter().position(|c| c == g))
                    .map_or(0, |p| p + 1);
                let correct = if gold_pos == 0 && !allow_none {
                    // forced choice with no true match: pick the most similar
                    let best = (0..n)
                        .max_by(|&a, &b| {
                            self.latent(task_id, gold, &ids[a])
                                .total_cmp(&self.latent(task_id, gold, &ids[b]))
                        })
                        .unwrap_or(0);
                    best + 1
                } else {
                    gold_pos
                };
                let accuracy = match (&self.config.position_bias, gold_pos) {
                    (Some(schedule), p) if p > 0 => schedule[(p - 1).min(schedule.len() - 1)],
                    _ => 1.0 - self.config.flip_rate,
                };
                // keyed on the gold position so a given slot behaves the same
                // however many other candidates are shown
                let pos = gold_pos.to_string();
                if self.unit(task_id, &["selecting", "correct", &pos]) < accuracy {
                    return Label::Index(correct);
                }
                let wrong: Vec<usize> = prompt
                    .expected
                    .labels()
                    .into_iter()
                    .filter_map(|l| match l {
                        Label::Index(i) if i != correct => Some(i),
                        _ => None,
                    })
                    .collect();
                if wrong.is_empty() {
                    return Label::Index(correct);
                }
                let mut parts = vec!["selecting", "wrong"];
                parts.extend(ids.iter().map(String::as_str));
                let pick = self.unit(task_id, &parts) * wrong.len() as f64;
                Label::Index(wrong[(pick as usize).min(wrong.len() - 1)])
            }
        }
    }

    fn probabilities(&self, task_id: &str, prompt: &RenderedPrompt, chosen: Label) -> BTreeMap<Label, f64> {
        let labels = prompt.expected.labels();
        let mut parts = vec!["confidence", prompt.anchor_id.as_str()];
        parts.extend(prompt.candidate_ids.iter().map(String::as_str));
        let q = 0.5 + 0.5 * self.unit(task_id, &parts);
        if labels.len() == 1 {
            return labels.into_iter().map(|l| (l, 1.0)).collect();
        }
        let rest = (1.0 - q) / (labels.len() - 1) as f64;
        labels
            .into_iter()
            .map(|l| (l, if l == chosen { q } else { rest }))
            .collect()
    }
}

fn label_text(label: Label) -> String {
    match label {
        Label::Yes => "Yes".into(),
        Label::No => "No".into(),
        Label::A => "Record A".into(),
        Label::B => "Record B".into(),
        Label::Index(i) => format!("[{i}]"),
    }
}

impl Backend for OracleBackend {
    fn model_name(&self) -> &str {
        &self.name
    }

    fn wants_probabilities(&self) -> bool {
        self.config.probability_mode == ProbabilityMode::Calibrated
    }

    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse> {
        let gold = self
            .truth
            .get(&request.task_id)
            .ok_or_else(|| Error::UnknownTask(request.task_id.clone()))?
            .as_deref();
        let label = self.answer(&request.task_id, gold, &request.prompt);
        let label_probs = (self.config.probability_mode == ProbabilityMode::Calibrated)
            .then(|| self.probabilities(&request.task_id, &request.prompt, label));
        Ok(BackendResponse {
            text: label_text(label),
            label_probs,
            usage: None,
        })
    }
}
