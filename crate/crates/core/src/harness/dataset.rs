//! Dataset JSONL loading and run-log persistence.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::{HarnessError, RunLog};
use crate::agent::{BenchmarkItem, Difficulty, RunRecord};

fn io_err(path: &Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), message: e.to_string() }
}

/// Reads one item per line:
/// `{"id","dataset","question","image","choices":[["A","…"],…]|null,"answer","difficulty"}`.
/// Blank lines are skipped. Every item is validated and `(dataset, id)`
/// pairs must be unique.
pub fn load_dataset(path: &Path) -> Result<Vec<BenchmarkItem>, HarnessError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut items = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |message: String| HarnessError::Schema { line: line_no, message };
        let mut raw: Value = serde_json::from_str(&line).map_err(|e| schema(e.to_string()))?;
        normalize_difficulty(&mut raw);
        let item: BenchmarkItem = serde_json::from_value(raw).map_err(|e| schema(e.to_string()))?;
        item.validate().map_err(schema)?;
        if !seen.insert((item.dataset.clone(), item.id.clone())) {
            return Err(schema(format!("duplicate id {:?} in dataset {:?}", item.id, item.dataset)));
        }
        items.push(item);
    }
    Ok(items)
}

/// Accepts lowercase difficulty labels and null.
fn normalize_difficulty(raw: &mut Value) {
    let Some(obj) = raw.as_object_mut() else { return };
    match obj.get("difficulty") {
        Some(Value::String(s)) => {
            let canon = Difficulty::ALL.iter().find(|d| d.as_str().eq_ignore_ascii_case(s.trim()));
            if let Some(d) = canon {
                obj.insert("difficulty".into(), json!(d.as_str()));
            }
        }
        Some(Value::Null) => {
            obj.remove("difficulty");
        }
        _ => {}
    }
}

pub fn write_records<'a>(path: &Path, records: impl IntoIterator<Item = &'a RunRecord>) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| io_err(path, e.into()))?;
        out.write_all(b"\n").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>, HarnessError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| HarnessError::Schema { line: i + 1, message: e.to_string() })?;
        records.push(record);
    }
    Ok(records)
}

/// Regroups flat records into one log per `(dataset, seed)`, sorted.
pub fn group_records(records: Vec<RunRecord>) -> Result<Vec<RunLog>, HarnessError> {
    let mut groups: BTreeMap<(String, u64), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.clone(), r.seed)).or_default().push(r);
    }
    groups.into_iter().map(|((dataset, seed), records)| RunLog::new(dataset, seed, records)).collect()
}

/// Maps public benchmark exports into the dataset schema.
pub mod convert {
    use serde_json::Value;

    use crate::agent::{BenchmarkItem, Difficulty};

    const LABELS: [&str; 10] = ["A", "B", "C", "D", "E", "F", "G", "H", "I", "J"];

    fn text(v: &Value, key: &str) -> Option<String> {
        match v.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    fn options(v: &Value, key: &str) -> Option<Vec<String>> {
        match v.get(key)? {
            Value::Array(a) => Some(a.iter().filter_map(|x| x.as_str().map(str::to_string)).collect()),
            // Some exports store the list as a Python-literal string.
            Value::String(s) => {
                let json_like = s.replace('\'', "\"");
                serde_json::from_str::<Vec<String>>(&json_like).ok()
            }
            _ => None,
        }
    }

    fn labelled(opts: Vec<String>) -> Option<Vec<(String, String)>> {
        if opts.is_empty() || opts.len() > LABELS.len() {
            return None;
        }
        Some(opts.into_iter().enumerate().map(|(i, o)| (LABELS[i].to_string(), o)).collect())
    }

    fn difficulty(s: Option<String>) -> Difficulty {
        match s.as_deref().map(str::to_ascii_lowercase).as_deref() {
            Some("easy") => Difficulty::Easy,
            Some("medium") => Difficulty::Medium,
            Some("hard") => Difficulty::Hard,
            _ => Difficulty::Unknown,
        }
    }

    /// MMMU-style rows: `id`, `question`, `options`, `answer` (a letter),
    /// `image_1`, `topic_difficulty`.
    pub fn from_mmmu(v: &Value) -> Result<BenchmarkItem, String> {
        let id = text(v, "id").ok_or("missing id")?;
        let choices = options(v, "options").and_then(labelled);
        Ok(BenchmarkItem {
            id,
            dataset: "MMMU".into(),
            question: text(v, "question").ok_or("missing question")?,
            image_ref: text(v, "image_1").or_else(|| text(v, "image")).ok_or("missing image")?,
            choices,
            gold_answer: text(v, "answer").ok_or("missing answer")?,
            difficulty: difficulty(text(v, "topic_difficulty")),
        })
    }

    /// MathVista-style rows: `pid`, `question`, `image`, `choices` (option
    /// texts or null) and `answer` given as the option text.
    pub fn from_mathvista(v: &Value) -> Result<BenchmarkItem, String> {
        let id = text(v, "pid").ok_or("missing pid")?;
        let answer = text(v, "answer").ok_or("missing answer")?;
        let choices = options(v, "choices").and_then(labelled);
        let gold_answer = match &choices {
            Some(c) => c
                .iter()
                .find(|(_, t)| t.trim() == answer.trim())
                .map(|(l, _)| l.clone())
                .ok_or_else(|| format!("answer {answer:?} is not among the choices"))?,
            None => answer,
        };
        Ok(BenchmarkItem {
            id,
            dataset: "MathVista".into(),
            question: text(v, "question").ok_or("missing question")?,
            image_ref: text(v, "image").ok_or("missing image")?,
            choices,
            gold_answer,
            difficulty: Difficulty::Unknown,
        })
    }
}
