//! The three ways of asking an LLM about a task.
//!
//! * matching: one yes/no call per (anchor, candidate) pair;
//! * comparing: "which of these two is closer to the anchor", asked twice
//!   with the candidates swapped, either over all pairs or as a bubble-sort
//!   top-k;
//! * selecting: a single listwise call that names the matching candidate or
//!   `[0]` for none.
//!
//! Candidate indices are 1-based throughout, matching the task's gold index.

use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{account_usage, Backend, BackendResponse, CostLedger, Label, ParsedLabel};
use crate::backend::parse_label;
use crate::error::{Error, Result};
use crate::prompts::{PromptSet, RenderedPrompt, Strategy};
use crate::records::{FewShotExample, MatchTask};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScoredCandidate {
    pub index: usize,
    pub score: f64,
}

/// One backend call, kept for auditing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub task_id: String,
    pub strategy: Strategy,
    /// Candidate record ids in presentation order.
    pub candidate_ids: Vec<String>,
    pub response: String,
    pub label: Label,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageLedger {
    pub stage: String,
    pub ledger: CostLedger,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StrategyResult {
    /// 1-based candidate index, `None` for "no match".
    pub prediction: Option<usize>,
    pub scores: Option<Vec<ScoredCandidate>>,
    /// Candidate indices best first, when the strategy ranks.
    pub ranking: Option<Vec<usize>>,
    pub ledger: CostLedger,
    pub stages: Vec<StageLedger>,
    pub trace: Vec<TraceEntry>,
}

impl StrategyResult {
    pub(crate) fn absorb(&mut self, stage: &str, other: StrategyResult) {
        self.ledger += &other.ledger;
        self.stages.push(StageLedger {
            stage: stage.to_string(),
            ledger: other.ledger,
        });
        self.trace.extend(other.trace);
    }
}

/// Similarity of a pair from the matcher's answer and the probability of the
/// generated label: `1 + p` for "Yes", `1 - p` for "No". Without a
/// probability the answer is coded 1 / 0.
pub fn matching_score(answer: Label, p: Option<f64>) -> f64 {
    match (answer, p) {
        (Label::Yes, Some(p)) => 1.0 + p,
        (_, Some(p)) => 1.0 - p,
        (Label::Yes, None) => 1.0,
        (_, None) => 0.0,
    }
}

struct Call {
    prompt: RenderedPrompt,
    response: BackendResponse,
    parsed: ParsedLabel,
}

impl Call {
    fn trace(&self, task_id: &str) -> TraceEntry {
        TraceEntry {
            task_id: task_id.to_string(),
            strategy: self.prompt.strategy,
            candidate_ids: self.prompt.candidate_ids.clone(),
            response: self.response.text.clone(),
            label: self.parsed.label,
            parse_ok: self.parsed.parse_ok,
        }
    }

    /// Renormalized probability of `label`, if the backend reported any.
    fn prob(&self, label: Label) -> Option<f64> {
        let probs = self.response.label_probs.as_ref()?;
        let labels = self.prompt.expected.labels();
        crate::backend::renormalize(probs, &labels)?.get(&label).copied()
    }
}

fn invoke(backend: &dyn Backend, task: &MatchTask, prompt: RenderedPrompt, what: impl FnOnce() -> String) -> Result<Call> {
    let request = backend.request(&task.task_id, prompt);
    let response = backend.complete(&request).map_err(|e| Error::Call {
        task_id: task.task_id.clone(),
        call: what(),
        source: Box::new(e),
    })?;
    let parsed = parse_label(&response.text, &request.prompt.expected);
    Ok(Call {
        prompt: request.prompt,
        response,
        parsed,
    })
}

/// Folds calls into a result in call order, so ledger sums are reproducible.
fn collect(task: &MatchTask, backend: &dyn Backend, calls: &[Call]) -> StrategyResult {
    let price = backend.price();
    let mut out = StrategyResult::default();
    for c in calls {
        out.ledger = account_usage(&c.response, &c.prompt, out.ledger, &price);
        out.trace.push(c.trace(&task.task_id));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct Strategies {
    pub prompts: PromptSet,
}

impl Strategies {
    pub fn new(prompts: PromptSet) -> Self {
        Self { prompts }
    }

    fn compare(&self, task: &MatchTask, backend: &dyn Backend, left: usize, right: usize) -> Result<Call> {
        let prompt = self
            .prompts
            .render_comparing(&task.anchor, task.candidate(left), task.candidate(right));
        invoke(backend, task, prompt, || format!("comparing ({left}, {right})"))
    }

    /// Both orders of one comparison, issued concurrently.
    fn compare_both(&self, task: &MatchTask, backend: &dyn Backend, i: usize, j: usize) -> Result<(Call, Call)> {
        let (a, b) = rayon::join(
            || self.compare(task, backend, i, j),
            || self.compare(task, backend, j, i),
        );
        Ok((a?, b?))
    }

    pub fn match_pairwise(
        &self,
        task: &MatchTask,
        backend: &dyn Backend,
        fewshot: &[FewShotExample],
    ) -> Result<StrategyResult> {
        let calls = (1..=task.n())
            .into_par_iter()
            .map(|i| {
                let prompt = self
                    .prompts
                    .render_matching(&task.anchor, task.candidate(i), fewshot);
                invoke(backend, task, prompt, || format!("matching candidate {i}"))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut out = collect(task, backend, &calls);
        let scores: Vec<ScoredCandidate> = calls
            .iter()
            .enumerate()
            .map(|(i, c)| ScoredCandidate {
                index: i + 1,
                score: matching_score(c.parsed.label, c.prob(c.parsed.label)),
            })
            .collect();
        out.prediction = calls
            .iter()
            .zip(&scores)
            .filter(|(c, _)| c.parsed.label == Label::Yes)
            .map(|(_, s)| *s)
            // strict comparison keeps the lowest index among equal scores
            .fold(None, |best: Option<ScoredCandidate>, s| match best {
                Some(b) if b.score >= s.score => Some(b),
                _ => Some(s),
            })
            .map(|s| s.index);
        out.ranking = Some(rank_by_score(&scores));
        out.scores = Some(scores);
        Ok(out)
    }

    /// Every unordered pair compared in both orders; ranking only.
    pub fn compare_all_pairs(&self, task: &MatchTask, backend: &dyn Backend) -> Result<StrategyResult> {
        let n = task.n();
        if n < 2 {
            return Err(Error::InvalidTask {
                task_id: task.task_id.clone(),
                message: "all-pair comparison needs at least two candidates".into(),
            });
        }
        let pairs: Vec<(usize, usize)> = (1..=n)
            .flat_map(|i| (i + 1..=n).map(move |j| (i, j)))
            .collect();
        let results = pairs
            .par_iter()
            .map(|&(i, j)| self.compare_both(task, backend, i, j))
            .collect::<Result<Vec<_>>>()?;

        let with_probs = backend.wants_probabilities()
            && results
                .iter()
                .all(|(f, r)| f.prob(Label::A).is_some() && r.prob(Label::A).is_some());
        let mut score = vec![0.0f64; n + 1];
        for (&(i, j), (fwd, rev)) in pairs.iter().zip(&results) {
            // fwd asks (i as A, j as B); rev asks (j as A, i as B)
            if with_probs {
                let p = |c: &Call, l| c.prob(l).unwrap_or(0.0);
                score[i] += p(fwd, Label::A) + p(rev, Label::B);
                score[j] += p(fwd, Label::B) + p(rev, Label::A);
            } else {
                let i_wins = usize::from(fwd.parsed.label == Label::A) + usize::from(rev.parsed.label == Label::B);
                match i_wins {
                    2 => score[i] += 2.0,
                    1 => {
                        score[i] += 1.0;
                        score[j] += 1.0;
                    }
                    _ => score[j] += 2.0,
                }
            }
        }

        let calls: Vec<Call> = results.into_iter().flat_map(|(a, b)| [a, b]).collect();
        let mut out = collect(task, backend, &calls);
        let scores: Vec<ScoredCandidate> = (1..=n)
            .map(|i| ScoredCandidate {
                index: i,
                score: score[i],
            })
            .collect();
        out.ranking = Some(rank_by_score(&scores));
        out.scores = Some(scores);
        Ok(out)
    }

    /// `k` bubble passes from the back of the list. A later candidate moves
    /// up only when it wins both orders of the comparison.
    pub fn compare_bubble_topk(&self, task: &MatchTask, backend: &dyn Backend, k: usize) -> Result<StrategyResult> {
        let n = task.n();
        if k == 0 || k > n {
            return Err(Error::InvalidTask {
                task_id: task.task_id.clone(),
                message: format!("bubble top-k needs 1 <= k <= n, got k={k}, n={n}"),
            });
        }
        let mut order: Vec<usize> = (1..=n).collect();
        let mut calls = Vec::with_capacity(k * (2 * n - k - 1));
        for pass in 0..k {
            for j in (pass + 1..n).rev() {
                let (front, back) = (order[j - 1], order[j]);
                let (fwd, rev) = self.compare_both(task, backend, front, back)?;
                if fwd.parsed.label == Label::B && rev.parsed.label == Label::A {
                    order.swap(j - 1, j);
                }
                calls.push(fwd);
                calls.push(rev);
            }
        }
        let mut out = collect(task, backend, &calls);
        out.ranking = Some(order);
        Ok(out)
    }

    /// Bubble top-1, then one matching call on the winner.
    pub fn compare_then_match(&self, task: &MatchTask, backend: &dyn Backend) -> Result<StrategyResult> {
        let ranked = self.compare_bubble_topk(task, backend, 1)?;
        let top = ranked.ranking.as_ref().expect("bubble sort ranks")[0];
        let verdict = self.match_pairwise_single(task, backend, top)?;

        let mut out = StrategyResult {
            ranking: ranked.ranking.clone(),
            ..StrategyResult::default()
        };
        let said_yes = verdict.prediction.is_some();
        out.absorb("compare", ranked);
        out.absorb("match", verdict);
        out.prediction = said_yes.then_some(top);
        Ok(out)
    }

    fn match_pairwise_single(&self, task: &MatchTask, backend: &dyn Backend, index: usize) -> Result<StrategyResult> {
        let prompt = self.prompts.render_matching(&task.anchor, task.candidate(index), &[]);
        let call = invoke(backend, task, prompt, || format!("matching candidate {index}"))?;
        let mut out = collect(task, backend, std::slice::from_ref(&call));
        out.prediction = (call.parsed.label == Label::Yes).then_some(index);
        out.scores = Some(vec![ScoredCandidate {
            index,
            score: matching_score(call.parsed.label, call.prob(call.parsed.label)),
        }]);
        Ok(out)
    }

    pub fn select_from_list(&self, task: &MatchTask, backend: &dyn Backend, allow_none: bool) -> Result<StrategyResult> {
        let all: Vec<usize> = (1..=task.n()).collect();
        self.select_among(task, backend, &all, allow_none)
    }

    /// Selecting over a subset of candidates, presented in the given order.
    /// The prediction refers back to the original candidate index.
    pub fn select_among(
        &self,
        task: &MatchTask,
        backend: &dyn Backend,
        indices: &[usize],
        allow_none: bool,
    ) -> Result<StrategyResult> {
        let shown: Vec<_> = indices.iter().map(|&i| task.candidate(i).clone()).collect();
        let prompt = self
            .prompts
            .render_selecting(&task.anchor, &shown, allow_none)
            .map_err(|e| e.in_task(&task.task_id, None))?;
        let call = invoke(backend, task, prompt, || "selecting".to_string())?;
        let mut out = collect(task, backend, std::slice::from_ref(&call));
        out.prediction = match call.parsed.label {
            Label::Index(0) => None,
            Label::Index(i) => Some(indices[i - 1]),
            _ => unreachable!("selecting prompt yields index labels"),
        };
        Ok(out)
    }
}

/// Indices by descending score, ties by ascending index.
pub fn rank_by_score(scores: &[ScoredCandidate]) -> Vec<usize> {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    sorted.into_iter().map(|s| s.index).collect()
}

pub fn match_pairwise(task: &MatchTask, backend: &dyn Backend, fewshot: &[FewShotExample]) -> Result<StrategyResult> {
    Strategies::default().match_pairwise(task, backend, fewshot)
}

pub fn compare_all_pairs(task: &MatchTask, backend: &dyn Backend) -> Result<StrategyResult> {
    Strategies::default().compare_all_pairs(task, backend)
}

pub fn compare_bubble_topk(task: &MatchTask, backend: &dyn Backend, k: usize) -> Result<StrategyResult> {
    Strategies::default().compare_bubble_topk(task, backend, k)
}

pub fn compare_then_match(task: &MatchTask, backend: &dyn Backend) -> Result<StrategyResult> {
    Strategies::default().compare_then_match(task, backend)
}

pub fn select_from_list(task: &MatchTask, backend: &dyn Backend, allow_none: bool) -> Result<StrategyResult> {
    Strategies::default().select_from_list(task, backend, allow_none)
}
