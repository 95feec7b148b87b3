//! Records, match tasks and dataset ingestion.
//!
//! A [`MatchTask`] is one anchor record plus the ordered candidate list a
//! blocker produced for it. The gold answer is a 1-based position in that
//! list, or `None` when the anchor has no true match among its candidates.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Key reserved for the record identifier inside a JSON record object.
pub const ID_KEY: &str = "id";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EntityRecord {
    pub id: String,
    pub source: String,
    attributes: Vec<(String, String)>,
}

impl EntityRecord {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        attributes: Vec<(String, String)>,
    ) -> Result<Self> {
        let id = id.into();
        let mut seen = HashSet::with_capacity(attributes.len());
        for (name, _) in &attributes {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateAttribute {
                    record: id,
                    name: name.clone(),
                });
            }
        }
        Ok(Self {
            id,
            source: source.into(),
            attributes,
        })
    }

    /// Convenience constructor for literal attribute lists.
    pub fn from_pairs<K, V>(id: &str, source: &str, pairs: &[(K, V)]) -> Result<Self>
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        Self::new(
            id,
            source,
            pairs
                .iter()
                .map(|(k, v)| (k.as_ref().to_string(), v.as_ref().to_string()))
                .collect(),
        )
    }

    pub fn attributes(&self) -> &[(String, String)] {
        &self.attributes
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.attributes
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert(ID_KEY.into(), Value::String(self.id.clone()));
        for (k, v) in &self.attributes {
            map.insert(k.clone(), Value::String(v.clone()));
        }
        Value::Object(map)
    }
}

/// How a record is flattened into prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordFormat {
    pub key_value_sep: String,
    pub attribute_sep: String,
}

impl Default for RecordFormat {
    fn default() -> Self {
        Self {
            key_value_sep: ": ".into(),
            attribute_sep: "; ".into(),
        }
    }
}

impl RecordFormat {
    pub fn render(&self, record: &EntityRecord) -> String {
        let mut out = String::new();
        for (i, (name, value)) in record.attributes.iter().enumerate() {
            if i > 0 {
                out.push_str(&self.attribute_sep);
            }
            out.push_str(name);
            out.push_str(&self.key_value_sep);
            out.push_str(value);
        }
        out
    }
}

/// Renders `name: value` pairs joined by `"; "`.
pub fn serialize_record(record: &EntityRecord) -> String {
    RecordFormat::default().render(record)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MatchTask {
    pub task_id: String,
    pub anchor: EntityRecord,
    candidates: Vec<EntityRecord>,
    gold: Option<usize>,
}

impl MatchTask {
    pub fn new(
        task_id: impl Into<String>,
        anchor: EntityRecord,
        candidates: Vec<EntityRecord>,
        gold: Option<usize>,
    ) -> Result<Self> {
        let task_id = task_id.into();
        if candidates.is_empty() {
            return Err(Error::InvalidTask {
                task_id,
                message: "candidate list is empty".into(),
            });
        }
        if let Some(g) = gold {
            if g == 0 || g > candidates.len() {
                return Err(Error::GoldOutOfRange {
                    task_id,
                    gold: g,
                    n: candidates.len(),
                });
            }
        }
        Ok(Self {
            task_id,
            anchor,
            candidates,
            gold,
        })
    }

    pub fn candidates(&self) -> &[EntityRecord] {
        &self.candidates
    }

    pub fn n(&self) -> usize {
        self.candidates.len()
    }

    /// 1-based position of the true match, if any.
    pub fn gold(&self) -> Option<usize> {
        self.gold
    }

    pub fn gold_record(&self) -> Option<&EntityRecord> {
        self.gold.map(|g| &self.candidates[g - 1])
    }

    /// 1-based access.
    pub fn candidate(&self, index: usize) -> &EntityRecord {
        &self.candidates[index - 1]
    }

    /// Reorders candidates; `order[i]` is the 1-based original index placed
    /// at new position `i + 1`. Gold follows its record.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let candidates = order.iter().map(|&i| self.candidate(i).clone()).collect();
        let gold = self
            .gold
            .and_then(|g| order.iter().position(|&i| i == g).map(|p| p + 1));
        Self::new(self.task_id.clone(), self.anchor.clone(), candidates, gold)
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        map.insert("task_id".into(), Value::String(self.task_id.clone()));
        map.insert("anchor".into(), self.anchor.to_json());
        map.insert(
            "candidates".into(),
            Value::Array(self.candidates.iter().map(EntityRecord::to_json).collect()),
        );
        map.insert(
            "gold".into(),
            self.gold.map_or(Value::Null, |g| Value::from(g as u64)),
        );
        Value::Object(map)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    tasks: Vec<MatchTask>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub name: String,
    pub schema: Vec<String>,
    pub tasks: usize,
    pub tasks_with_gold: usize,
    pub pairs: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, tasks: Vec<MatchTask>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(tasks.len());
        for t in &tasks {
            if !seen.insert(t.task_id.as_str()) {
                return Err(Error::DuplicateTaskId(t.task_id.clone()));
            }
        }
        Ok(Self {
            name: name.into(),
            tasks,
        })
    }

    pub fn tasks(&self) -> &[MatchTask] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, task_id: &str) -> Option<&MatchTask> {
        self.tasks.iter().find(|t| t.task_id == task_id)
    }

    /// Attribute names in first-seen order over anchors then candidates.
    pub fn schema(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut schema = Vec::new();
        for t in &self.tasks {
            for r in std::iter::once(&t.anchor).chain(t.candidates.iter()) {
                for (k, _) in r.attributes() {
                    if seen.insert(k.clone()) {
                        schema.push(k.clone());
                    }
                }
            }
        }
        schema
    }

    pub fn summary(&self) -> DatasetSummary {
        DatasetSummary {
            name: self.name.clone(),
            schema: self.schema(),
            tasks: self.tasks.len(),
            tasks_with_gold: self.tasks.iter().filter(|t| t.gold.is_some()).count(),
            pairs: self.tasks.iter().map(MatchTask::n).sum(),
        }
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for t in &self.tasks {
            serde_json::to_writer(&mut w, &t.to_json())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(File::create(path)?);
        self.write_jsonl(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewShotExample {
    pub record_left: EntityRecord,
    pub record_right: EntityRecord,
    pub label: bool,
}

/// Where a dataset comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    /// One JSON task per line.
    TaskJsonl(PathBuf),
    /// `anchor_id,candidate_id,label` pairs plus left/right record tables.
    PairTable {
        pairs: PathBuf,
        left: PathBuf,
        right: PathBuf,
    },
}

pub fn load_tasks(source: &DatasetSource) -> Result<Dataset> {
    match source {
        DatasetSource::TaskJsonl(path) => load_task_jsonl(path),
        DatasetSource::PairTable { pairs, left, right } => load_pair_table(pairs, left, right),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn scalar_to_string(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some(String::new()),
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

fn record_from_json(value: &Value, default_id: String, source: &str) -> Result<EntityRecord, String> {
    let obj = value
        .as_object()
        .ok_or_else(|| "record must be a JSON object".to_string())?;
    let mut id = default_id;
    let mut attributes = Vec::with_capacity(obj.len());
    for (k, v) in obj {
        let s = scalar_to_string(v).ok_or_else(|| format!("attribute `{k}` is not a scalar"))?;
        if k == ID_KEY {
            id = s;
        } else {
            attributes.push((k.clone(), s));
        }
    }
    EntityRecord::new(id, source, attributes).map_err(|e| e.to_string())
}

fn parse_task_line(line: &str) -> Result<MatchTask, String> {
    let value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let obj = value
        .as_object()
        .ok_or_else(|| "task must be a JSON object".to_string())?;
    let task_id = match obj.get("task_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err("missing string field `task_id`".into()),
    };
    let anchor = record_from_json(
        obj.get("anchor").ok_or("missing field `anchor`")?,
        format!("{task_id}:anchor"),
        "D1",
    )?;
    let candidates = obj
        .get("candidates")
        .and_then(Value::as_array)
        .ok_or("missing array field `candidates`")?
        .iter()
        .enumerate()
        .map(|(i, c)| record_from_json(c, format!("{task_id}:{}", i + 1), "D2"))
        .collect::<Result<Vec<_>, _>>()?;
    let gold = match obj.get("gold") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| format!("`gold` must be a positive integer or null, got {v}"))?
                as usize,
        ),
    };
    MatchTask::new(task_id, anchor, candidates, gold).map_err(|e| e.to_string())
}

fn load_task_jsonl(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(File::open(path)?);
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let task = parse_task_line(&line).map_err(parse_err)?;
        if !seen.insert(task.task_id.clone()) {
            return Err(parse_err(format!("duplicate task_id `{}`", task.task_id)));
        }
        tasks.push(task);
    }
    Dataset::new(dataset_name(path), tasks)
}

fn load_record_table(path: &Path, source: &str) -> Result<HashMap<String, EntityRecord>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == ID_KEY)
        .ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("missing `{ID_KEY}` column"),
        })?;
    let mut out = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let id = row.get(id_col).unwrap_or_default().to_string();
        let attributes = headers
            .iter()
            .enumerate()
            .filter(|(c, _)| *c != id_col)
            .map(|(c, h)| (h.to_string(), row.get(c).unwrap_or_default().to_string()))
            .collect();
        let record = EntityRecord::new(id.clone(), source, attributes)?;
        if out.insert(id.clone(), record).is_some() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: format!("duplicate record id `{id}`"),
            });
        }
    }
    Ok(out)
}

fn parse_label(raw: &str) -> Option<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Groups labelled pairs by anchor into tasks. Task order follows the first
/// appearance of each anchor; candidate order follows file order.
pub fn load_pair_table(pairs: &Path, left: &Path, right: &Path) -> Result<Dataset> {
    let left_records = load_record_table(left, "D1")?;
    let right_records = load_record_table(right, "D2")?;

    let mut reader = csv::Reader::from_path(pairs)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            path: pairs.to_path_buf(),
            line: 1,
            message: format!("missing `{name}` column"),
        })
    };
    let (a_col, c_col, l_col) = (col("anchor_id")?, col("candidate_id")?, col("label")?);

    struct Group {
        anchor: String,
        candidates: Vec<String>,
        gold: Option<usize>,
        first_line: usize,
    }
    let mut order: Vec<Group> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for (i, row) in reader.records().enumerate() {
        let row = row?;
        let line = i + 2;
        let err = |message: String| Error::Parse {
            path: pairs.to_path_buf(),
            line,
            message,
        };
        let anchor = row.get(a_col).unwrap_or_default().to_string();
        let cand = row.get(c_col).unwrap_or_default().to_string();
        let label = parse_label(row.get(l_col).unwrap_or_default())
            .ok_or_else(|| err(format!("bad label `{}`", row.get(l_col).unwrap_or_default())))?;
        if !left_records.contains_key(&anchor) {
            return Err(err(format!("unknown anchor id `{anchor}`")));
        }
        if !right_records.contains_key(&cand) {
            return Err(err(format!("unknown candidate id `{cand}`")));
        }
        let gi = *index.entry(anchor.clone()).or_insert_with(|| {
            order.push(Group {
                anchor: anchor.clone(),
                candidates: Vec::new(),
                gold: None,
                first_line: line,
            });
            order.len() - 1
        });
        let group = &mut order[gi];
        group.candidates.push(cand);
        if label {
            if group.gold.is_some() {
                return Err(err(format!("anchor `{anchor}` has more than one positive candidate")));
            }
            group.gold = Some(group.candidates.len());
        }
    }

    let tasks = order
        .into_iter()
        .map(|g| {
            let candidates = g
                .candidates
                .iter()
                .map(|c| right_records[c].clone())
                .collect();
            MatchTask::new(g.anchor.clone(), left_records[&g.anchor].clone(), candidates, g.gold)
                .map_err(|e| Error::Parse {
                    path: pairs.to_path_buf(),
                    line: g.first_line,
                    message: e.to_string(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(dataset_name(pairs), tasks)
}

pub fn load_fewshot_pool(path: &Path) -> Result<Vec<FewShotExample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut pool = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = (|| -> Result<FewShotExample, String> {
            let v: Value = serde_json::from_str(&line).map_err(|e| e.to_string())?;
            let left = record_from_json(
                v.get("left").ok_or("missing field `left`")?,
                format!("fewshot:{}:left", i + 1),
                "D1",
            )?;
            let right = record_from_json(
                v.get("right").ok_or("missing field `right`")?,
                format!("fewshot:{}:right", i + 1),
                "D2",
            )?;
            let label = v
                .get("label")
                .and_then(Value::as_bool)
                .ok_or("missing boolean field `label`")?;
            Ok(FewShotExample {
                record_left: left,
                record_right: right,
                label,
            })
        })();
        pool.push(parsed.map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        })?);
    }
    Ok(pool)
}

fn token_set(text: &str) -> BTreeSet<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Jaccard similarity over lowercased whitespace tokens; 0 when both are empty.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (a, b) = (token_set(a), token_set(b));
    let union = a.union(&b).count();
    if union == 0 {
        return 0.0;
    }
    a.intersection(&b).count() as f64 / union as f64
}

/// Picks the `n_pos` positives and `n_neg` negatives whose left record is most
/// similar to the task anchor. Positives come first; within a class the order
/// is by descending similarity, ties by pool order.
pub fn retrieve_fewshot(
    pool: &[FewShotExample],
    target: &MatchTask,
    n_pos: usize,
    n_neg: usize,
) -> Result<Vec<FewShotExample>> {
    let anchor = serialize_record(&target.anchor);
    let mut out = Vec::with_capacity(n_pos + n_neg);
    for (label, want, class) in [(true, n_pos, "positive"), (false, n_neg, "negative")] {
        let mut scored: Vec<(usize, f64)> = pool
            .iter()
            .enumerate()
            .filter(|(_, ex)| ex.label == label)
            .map(|(i, ex)| (i, token_jaccard(&anchor, &serialize_record(&ex.record_left))))
            .collect();
        if scored.len() < want {
            return Err(Error::InsufficientPool {
                class,
                available: scored.len(),
                requested: want,
            });
        }
        // stable sort keeps pool order among equal similarities
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));
        out.extend(scored.iter().take(want).map(|(i, _)| pool[*i].clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    fn load(content: &str) -> Result<Dataset> {
        let f = write_tmp(content);
        load_tasks(&DatasetSource::TaskJsonl(f.path().to_path_buf()))
    }

    #[test]
    fn serializes_table_one_anchor() {
        let r = EntityRecord::from_pairs(
            "a",
            "D1",
            &[
                ("Title", "Lineage Tracing for General Data Warehouse Transformations"),
                ("Authors", "Yingwei Cui, Jennifer Widom"),
                ("Venue", "VLDB"),
                ("Year", "2001"),
            ],
        )
        .unwrap();
        assert_eq!(
            serialize_record(&r),
            "Title: Lineage Tracing for General Data Warehouse Transformations; \
             Authors: Yingwei Cui, Jennifer Widom; Venue: VLDB; Year: 2001"
        );
    }

    #[test]
    fn serializes_empty_and_blank() {
        let empty = EntityRecord::new("e", "D1", vec![]).unwrap();
        assert_eq!(serialize_record(&empty), "");
        let blank = EntityRecord::from_pairs("b", "D1", &[("Venue", "")]).unwrap();
        assert_eq!(serialize_record(&blank), "Venue: ");
    }

    #[test]
    fn rejects_duplicate_attribute() {
        let err = EntityRecord::from_pairs("x", "D1", &[("a", "1"), ("a", "2")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateAttribute { .. }));
    }

    #[test]
    fn loads_single_task() {
        let ds = load(
            r#"{"task_id":"t1","anchor":{"title":"x","year":"2001"},"candidates":[{"title":"a"},{"title":"b"},{"title":"c"}],"gold":2}"#,
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        let t = &ds.tasks()[0];
        assert_eq!(t.n(), 3);
        assert_eq!(t.gold(), Some(2));
        assert_eq!(t.anchor.attributes()[0].0, "title");
        assert_eq!(t.anchor.attributes()[1].0, "year");
        assert_eq!(t.candidate(2).id, "t1:2");
    }

    #[test]
    fn attribute_order_follows_file_not_alphabet() {
        let ds = load(r#"{"task_id":"t","anchor":{"z":"1","a":"2","m":null},"candidates":[{"id":"c","b":3}],"gold":null}"#)
            .unwrap();
        let names: Vec<_> = ds.tasks()[0].anchor.attributes().iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(names, ["z", "a", "m"]);
        assert_eq!(ds.tasks()[0].anchor.get("m"), Some(""));
        assert_eq!(ds.tasks()[0].candidate(1).id, "c");
        assert_eq!(ds.tasks()[0].candidate(1).get("b"), Some("3"));
    }

    #[test]
    fn missing_gold_is_none() {
        let ds = load(r#"{"task_id":"t","anchor":{"a":"1"},"candidates":[{"a":"2"}]}"#).unwrap();
        assert_eq!(ds.tasks()[0].gold(), None);
    }

    #[test]
    fn gold_out_of_range_names_line() {
        let content = concat!(
            r#"{"task_id":"ok","anchor":{"a":"1"},"candidates":[{"a":"2"}],"gold":1}"#,
            "\n",
            r#"{"task_id":"bad","anchor":{"a":"1"},"candidates":[{"a":"2"},{"a":"3"},{"a":"4"}],"gold":5}"#,
            "\n"
        );
        let err = load(content).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("gold index 5"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_task_id_rejected() {
        let line = r#"{"task_id":"t","anchor":{"a":"1"},"candidates":[{"a":"2"}]}"#;
        let err = load(&format!("{line}\n{line}\n")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn malformed_json_names_line() {
        let err = load("\n{not json").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_candidates_rejected() {
        assert!(load(r#"{"task_id":"t","anchor":{},"candidates":[]}"#).is_err());
    }

    #[test]
    fn pair_table_groups_by_anchor() {
        let left = write_tmp("id,title\nl1,alpha\nl2,beta\n");
        let right = write_tmp("id,title\nr1,alpha'\nr2,gamma\nr3,beta'\n");
        let pairs = write_tmp(
            "anchor_id,candidate_id,label\nl1,r2,0\nl2,r3,1\nl1,r1,1\nl2,r1,0\nl1,r3,0\n",
        );
        let ds = load_pair_table(pairs.path(), left.path(), right.path()).unwrap();
        assert_eq!(ds.len(), 2);
        let t1 = &ds.tasks()[0];
        assert_eq!(t1.task_id, "l1");
        let ids: Vec<_> = t1.candidates().iter().map(|c| c.id.as_str()).collect();
        assert_eq!(ids, ["r2", "r1", "r3"]);
        assert_eq!(t1.gold(), Some(2));
        assert_eq!(ds.tasks()[1].gold(), Some(1));
    }

    #[test]
    fn pair_table_rejects_two_positives() {
        let left = write_tmp("id,t\nl1,a\n");
        let right = write_tmp("id,t\nr1,a\nr2,b\n");
        let pairs = write_tmp("anchor_id,candidate_id,label\nl1,r1,1\nl1,r2,1\n");
        assert!(load_pair_table(pairs.path(), left.path(), right.path()).is_err());
    }

    fn example(left: &str, label: bool) -> FewShotExample {
        FewShotExample {
            record_left: EntityRecord::from_pairs("l", "D1", &[("t", left)]).unwrap(),
            record_right: EntityRecord::from_pairs("r", "D2", &[("t", "x")]).unwrap(),
            label,
        }
    }

    fn target(anchor: &str) -> MatchTask {
        MatchTask::new(
            "t",
            EntityRecord::from_pairs("a", "D1", &[("t", anchor)]).unwrap(),
            vec![EntityRecord::from_pairs("c", "D2", &[("t", "c")]).unwrap()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn fewshot_zero_is_empty() {
        let pool = vec![example("a", true), example("b", false)];
        assert!(retrieve_fewshot(&pool, &target("a"), 0, 0).unwrap().is_empty());
    }

    #[test]
    fn fewshot_short_pool_names_class() {
        let pool = vec![example("a", true), example("b", true), example("c", false)];
        match retrieve_fewshot(&pool, &target("a"), 3, 0).unwrap_err() {
            Error::InsufficientPool { class, available, .. } => {
                assert_eq!(class, "positive");
                assert_eq!(available, 2);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn fewshot_positives_first_by_similarity() {
        let pool = vec![
            example("red green", false),
            example("blue", true),
            example("red", true),
            example("red green blue", true),
            example("red", false),
        ];
        let got = retrieve_fewshot(&pool, &target("red green"), 2, 1).unwrap();
        let lefts: Vec<_> = got.iter().map(|e| e.record_left.get("t").unwrap()).collect();
        // "t: red green" vs "t: red green blue" = 3/4, vs "t: red" = 2/3
        assert_eq!(lefts, ["red green blue", "red", "red green"]);
        assert_eq!(got.iter().map(|e| e.label).collect::<Vec<_>>(), [true, true, false]);
    }

    #[test]
    fn jaccard_basics() {
        assert_eq!(token_jaccard("", ""), 0.0);
        assert_eq!(token_jaccard("A b", "a B"), 1.0);
        assert!((token_jaccard("a b", "b c") - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn permuted_tracks_gold() {
        let cands = (1..=3)
            .map(|i| EntityRecord::from_pairs(&format!("c{i}"), "D2", &[("t", "x")]).unwrap())
            .collect();
        let t = MatchTask::new("t", target("a").anchor, cands, Some(1)).unwrap();
        let p = t.permuted(&[3, 1, 2]).unwrap();
        assert_eq!(p.gold(), Some(2));
        assert_eq!(p.gold_record().unwrap().id, "c1");
    }
}
