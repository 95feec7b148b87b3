//! Prompt templates for the three strategies.
//!
//! Templates use a small subset of Jinja: `{{ name }}` placeholders and a
//! single `{% for x in list %}...{% endfor %}` loop exposing `loop.index`.
//! The default bodies are embedded verbatim; custom bodies can be loaded from
//! plain-text files as long as they only reference the strategy's
//! placeholders.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{EntityRecord, FewShotExample, RecordFormat};

pub const MATCHING_TEMPLATE: &str = "Do the two entity records refer to the same real-world entity? \
Answer \"Yes\" if they do and \"No\" if they do not.\n\
\n\
Record 1: {{ record_left }}\n\
Record 2: {{ record_right }}";

pub const COMPARING_TEMPLATE: &str = "Which of the following two records is more likely to refer to \
the same real-world entity as the given record? Answer with the corresponding record identifier \
\"Record A\" or \"Record B\".\n\
\n\
Given entity record: {{ anchor }}\n\
\n\
Record A: {{ candidate_left }}\n\
Record B: {{ candidate_right }}";

pub const SELECTING_TEMPLATE: &str = "Select a record from the following candidates that refers to \
the same real-world entity as the given record. Answer with the corresponding record number \
surrounded by \"[]\" or \"[0]\" if there is none.\n\
\n\
Given entity record: {{ anchor }}\n\
\n\
Candidate records:{% for candidate in candidates %}\n\
[{{ loop.index }}] {{ candidate }}{% endfor %}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Matching,
    Comparing,
    Selecting,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Matching => "matching",
            Strategy::Comparing => "comparing",
            Strategy::Selecting => "selecting",
        }
    }

    fn placeholders(self) -> &'static [&'static str] {
        match self {
            Strategy::Matching => &["record_left", "record_right"],
            Strategy::Comparing => &["anchor", "candidate_left", "candidate_right"],
            Strategy::Selecting => &["anchor", "candidates"],
        }
    }

    fn default_body(self) -> &'static str {
        match self {
            Strategy::Matching => MATCHING_TEMPLATE,
            Strategy::Comparing => COMPARING_TEMPLATE,
            Strategy::Selecting => SELECTING_TEMPLATE,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Labels a response to a prompt may legitimately carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExpectedLabels {
    YesNo,
    RecordAB,
    /// `0..=n` when `allow_none`, else `1..=n`.
    Index { n: usize, allow_none: bool },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RenderedPrompt {
    pub strategy: Strategy,
    pub text: String,
    /// Entity records embedded in `text`, few-shot examples included.
    pub record_count: usize,
    pub expected: ExpectedLabels,
    /// Record the question is about (the left record for matching).
    pub anchor_id: String,
    /// Records being judged, in presentation order.
    pub candidate_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Text(String),
    Var(String),
    For {
        item: String,
        list: String,
        body: Vec<Node>,
    },
}

fn parse_nodes(src: &str, in_loop: bool) -> Result<(Vec<Node>, &str)> {
    let mut nodes = Vec::new();
    let mut rest = src;
    loop {
        let next_var = rest.find("{{");
        let next_tag = rest.find("{%");
        let (pos, is_tag) = match (next_var, next_tag) {
            (None, None) => {
                if in_loop {
                    return Err(Error::Template("unterminated `{% for %}` block".into()));
                }
                if !rest.is_empty() {
                    nodes.push(Node::Text(rest.to_string()));
                }
                return Ok((nodes, ""));
            }
            (Some(v), Some(t)) if t < v => (t, true),
            (Some(v), _) => (v, false),
            (None, Some(t)) => (t, true),
        };
        if pos > 0 {
            nodes.push(Node::Text(rest[..pos].to_string()));
        }
        let close = if is_tag { "%}" } else { "}}" };
        let end = rest[pos + 2..]
            .find(close)
            .ok_or_else(|| Error::Template(format!("unclosed `{}`", &rest[pos..pos + 2])))?;
        let inner = rest[pos + 2..pos + 2 + end].trim();
        rest = &rest[pos + 2 + end + 2..];
        if !is_tag {
            nodes.push(Node::Var(inner.to_string()));
            continue;
        }
        let words: Vec<&str> = inner.split_whitespace().collect();
        match words.as_slice() {
            ["for", item, "in", list] => {
                let (body, after) = parse_nodes(rest, true)?;
                nodes.push(Node::For {
                    item: item.to_string(),
                    list: list.to_string(),
                    body,
                });
                rest = after;
            }
            ["endfor"] if in_loop => return Ok((nodes, rest)),
            _ => return Err(Error::Template(format!("unsupported tag `{{% {inner} %}}`"))),
        }
    }
}

#[derive(Default)]
struct Context<'a> {
    scalars: HashMap<&'a str, &'a str>,
    lists: HashMap<&'a str, &'a [String]>,
}

fn render_nodes(nodes: &[Node], ctx: &Context<'_>, locals: &[(&str, &str)], out: &mut String) {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Var(name) => {
                let value = locals
                    .iter()
                    .rev()
                    .find(|(k, _)| k == name)
                    .map(|(_, v)| *v)
                    .or_else(|| ctx.scalars.get(name.as_str()).copied())
                    .unwrap_or_default();
                out.push_str(value);
            }
            Node::For { item, list, body } => {
                let items = ctx.lists.get(list.as_str()).copied().unwrap_or_default();
                for (i, value) in items.iter().enumerate() {
                    let index = (i + 1).to_string();
                    let mut scope = locals.to_vec();
                    scope.push((item.as_str(), value.as_str()));
                    scope.push(("loop.index", index.as_str()));
                    render_nodes(body, ctx, &scope, out);
                }
            }
        }
    }
}

fn collect_names(nodes: &[Node], bound: &[&str], out: &mut Vec<String>) {
    for node in nodes {
        match node {
            Node::Text(_) => {}
            Node::Var(name) => {
                if !bound.contains(&name.as_str()) {
                    out.push(name.clone());
                }
            }
            Node::For { item, list, body } => {
                out.push(list.clone());
                let mut inner = bound.to_vec();
                inner.push(item);
                inner.push("loop.index");
                collect_names(body, &inner, out);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub strategy: Strategy,
    body: String,
    nodes: Vec<Node>,
}

impl PromptTemplate {
    pub fn new(strategy: Strategy, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let (nodes, _) = parse_nodes(&body, false)?;
        let mut names = Vec::new();
        collect_names(&nodes, &[], &mut names);
        let allowed = strategy.placeholders();
        if let Some(bad) = names.iter().find(|n| !allowed.contains(&n.as_str())) {
            return Err(Error::Template(format!(
                "{strategy} template uses unknown placeholder `{bad}` (allowed: {})",
                allowed.join(", ")
            )));
        }
        Ok(Self {
            strategy,
            body,
            nodes,
        })
    }

    pub fn default_for(strategy: Strategy) -> Self {
        Self::new(strategy, strategy.default_body()).expect("embedded template parses")
    }

    pub fn from_file(strategy: Strategy, path: &Path) -> Result<Self> {
        Self::new(strategy, std::fs::read_to_string(path)?)
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    fn render(&self, scalars: &[(&str, &str)], lists: &[(&str, &[String])]) -> String {
        let ctx = Context {
            scalars: scalars.iter().copied().collect(),
            lists: lists.iter().copied().collect(),
        };
        let mut out = String::with_capacity(self.body.len() * 2);
        render_nodes(&self.nodes, &ctx, &[], &mut out);
        out
    }
}

/// The three templates plus the record flattening rule.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub matching: PromptTemplate,
    pub comparing: PromptTemplate,
    pub selecting: PromptTemplate,
    pub format: RecordFormat,
}

impl Default for PromptSet {
    fn default() -> Self {
        Self {
            matching: PromptTemplate::default_for(Strategy::Matching),
            comparing: PromptTemplate::default_for(Strategy::Comparing),
            selecting: PromptTemplate::default_for(Strategy::Selecting),
            format: RecordFormat::default(),
        }
    }
}

impl PromptSet {
    fn matching_block(&self, left: &EntityRecord, right: &EntityRecord) -> String {
        let (l, r) = (self.format.render(left), self.format.render(right));
        self.matching
            .render(&[("record_left", &l), ("record_right", &r)], &[])
    }

    /// Few-shot examples are rendered as full matching prompts, each
    /// followed by its `Yes`/`No` label line, ahead of the target pair.
    pub fn render_matching(
        &self,
        left: &EntityRecord,
        right: &EntityRecord,
        fewshot: &[FewShotExample],
    ) -> RenderedPrompt {
        let mut blocks: Vec<String> = fewshot
            .iter()
            .map(|ex| {
                let label = if ex.label { "Yes" } else { "No" };
                format!(
                    "{}\n{label}",
                    self.matching_block(&ex.record_left, &ex.record_right)
                )
            })
            .collect();
        blocks.push(self.matching_block(left, right));
        RenderedPrompt {
            strategy: Strategy::Matching,
            text: blocks.join("\n\n"),
            record_count: 2 + 2 * fewshot.len(),
            expected: ExpectedLabels::YesNo,
            anchor_id: left.id.clone(),
            candidate_ids: vec![right.id.clone()],
        }
    }

    pub fn render_comparing(
        &self,
        anchor: &EntityRecord,
        cand_left: &EntityRecord,
        cand_right: &EntityRecord,
    ) -> RenderedPrompt {
        let (a, l, r) = (
            self.format.render(anchor),
            self.format.render(cand_left),
            self.format.render(cand_right),
        );
        let text = self.comparing.render(
            &[("anchor", &a), ("candidate_left", &l), ("candidate_right", &r)],
            &[],
        );
        RenderedPrompt {
            strategy: Strategy::Comparing,
            text,
            record_count: 3,
            expected: ExpectedLabels::RecordAB,
            anchor_id: anchor.id.clone(),
            candidate_ids: vec![cand_left.id.clone(), cand_right.id.clone()],
        }
    }

    pub fn render_selecting(
        &self,
        anchor: &EntityRecord,
        candidates: &[EntityRecord],
        allow_none: bool,
    ) -> Result<RenderedPrompt> {
        if candidates.is_empty() {
            return Err(Error::EmptyCandidates);
        }
        let a = self.format.render(anchor);
        let rendered: Vec<String> = candidates.iter().map(|c| self.format.render(c)).collect();
        let text = self
            .selecting
            .render(&[("anchor", &a)], &[("candidates", &rendered)]);
        Ok(RenderedPrompt {
            strategy: Strategy::Selecting,
            text,
            record_count: candidates.len() + 1,
            expected: ExpectedLabels::Index {
                n: candidates.len(),
                allow_none,
            },
            anchor_id: anchor.id.clone(),
            candidate_ids: candidates.iter().map(|c| c.id.clone()).collect(),
        })
    }
}

pub fn render_matching(
    left: &EntityRecord,
    right: &EntityRecord,
    fewshot: &[FewShotExample],
) -> RenderedPrompt {
    PromptSet::default().render_matching(left, right, fewshot)
}

pub fn render_comparing(
    anchor: &EntityRecord,
    cand_left: &EntityRecord,
    cand_right: &EntityRecord,
) -> RenderedPrompt {
    PromptSet::default().render_comparing(anchor, cand_left, cand_right)
}

pub fn render_selecting(anchor: &EntityRecord, candidates: &[EntityRecord]) -> Result<RenderedPrompt> {
    PromptSet::default().render_selecting(anchor, candidates, true)
}
