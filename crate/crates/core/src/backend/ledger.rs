use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use super::BackendResponse;
use crate::prompts::RenderedPrompt;

/// Prices in currency units per one million tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub input_per_million: f64,
    #[serde(default)]
    pub output_per_million: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostLedger {
    pub invocations: u64,
    pub input_records: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl CostLedger {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    /// Same counters, ignoring currency (which is not exactly additive in f64).
    pub fn same_counts(&self, other: &CostLedger) -> bool {
        self.invocations == other.invocations
            && self.input_records == other.input_records
            && self.prompt_tokens == other.prompt_tokens
            && self.completion_tokens == other.completion_tokens
    }
}

impl AddAssign<&CostLedger> for CostLedger {
    fn add_assign(&mut self, rhs: &CostLedger) {
        self.invocations += rhs.invocations;
        self.input_records += rhs.input_records;
        self.prompt_tokens += rhs.prompt_tokens;
        self.completion_tokens += rhs.completion_tokens;
        self.cost += rhs.cost;
    }
}

impl std::iter::Sum for CostLedger {
    fn sum<I: Iterator<Item = CostLedger>>(iter: I) -> Self {
        iter.fold(CostLedger::default(), |mut acc, l| {
            acc += &l;
            acc
        })
    }
}

/// `ceil(chars / 4)`, used when a service reports no usage.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Adds one invocation to the ledger.
pub fn account_usage(
    response: &BackendResponse,
    prompt: &RenderedPrompt,
    mut ledger: CostLedger,
    price: &PriceTable,
) -> CostLedger {
    let (prompt_tokens, completion_tokens) = match response.usage {
        Some(u) => (u.prompt_tokens, u.completion_tokens),
        None => (estimate_tokens(&prompt.text), estimate_tokens(&response.text)),
    };
    ledger.invocations += 1;
    ledger.input_records += prompt.record_count as u64;
    ledger.prompt_tokens += prompt_tokens;
    ledger.completion_tokens += completion_tokens;
    ledger.cost += (prompt_tokens as f64 * price.input_per_million
        + completion_tokens as f64 * price.output_per_million)
        / 1_000_000.0;
    ledger
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Usage;
    use crate::prompts::{render_matching, render_selecting};
    use crate::records::EntityRecord;

    fn rec(id: &str) -> EntityRecord {
        EntityRecord::from_pairs(id, "D", &[("t", id)]).unwrap()
    }

    fn reply(text: &str, usage: Option<Usage>) -> BackendResponse {
        BackendResponse {
            text: text.into(),
            label_probs: None,
            usage,
        }
    }

    #[test]
    fn matching_adds_two_records() {
        let p = render_matching(&rec("a"), &rec("b"), &[]);
        let l = account_usage(&reply("Yes", None), &p, CostLedger::default(), &PriceTable::default());
        assert_eq!((l.invocations, l.input_records), (1, 2));
        assert_eq!(l.prompt_tokens, estimate_tokens(&p.text));
        assert_eq!(l.completion_tokens, 1);
        assert_eq!(l.cost, 0.0);
    }

    #[test]
    fn selecting_adds_n_plus_one() {
        let cands: Vec<_> = (0..10).map(|i| rec(&format!("c{i}"))).collect();
        let p = render_selecting(&rec("a"), &cands).unwrap();
        let l = account_usage(&reply("[1]", None), &p, CostLedger::default(), &PriceTable::default());
        assert_eq!(l.input_records, 11);
    }

    #[test]
    fn reported_usage_is_priced() {
        let p = render_matching(&rec("a"), &rec("b"), &[]);
        let price = PriceTable {
            input_per_million: 2.0,
            output_per_million: 8.0,
        };
        let usage = Some(Usage {
            prompt_tokens: 500_000,
            completion_tokens: 250_000,
        });
        let l = account_usage(&reply("No", usage), &p, CostLedger::default(), &price);
        assert_eq!((l.prompt_tokens, l.completion_tokens), (500_000, 250_000));
        assert!((l.cost - 3.0).abs() < 1e-12);
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(estimate_tokens(""), 0);
        assert_eq!(estimate_tokens("abcd"), 1);
        assert_eq!(estimate_tokens("abcde"), 2);
    }
}
