//! File formats: document and question JSON Lines, model attribute CSV.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use tempora_core::corpus::{doc_id, Category, Document};
use tempora_core::event::Question;

use crate::error::{Error, Result};

/// One line of a document file. `doc_id`, `char_len` and `byte_len` are
/// written on export and recomputed on import.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doc_id: Option<String>,
    pub source_id: String,
    #[serde(default)]
    pub category: Category,
    #[serde(default)]
    pub title: Option<String>,
    pub body: String,
    pub observed_at: NaiveDate,
}

impl From<&Document> for DocumentRecord {
    fn from(d: &Document) -> Self {
        Self {
            doc_id: Some(d.doc_id.clone()),
            source_id: d.source_id.clone(),
            category: d.category,
            title: d.title.clone(),
            body: d.body.clone(),
            observed_at: d.observed_at,
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Lines with content, numbered from 1.
fn jsonl_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

/// Load already-cleaned documents. Bodies are taken as they are; a stored
/// `doc_id` that does not match the body is a schema error.
pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let text = read(path)?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in jsonl_lines(&text) {
        let schema = |detail: String| Error::Schema { path: path.into(), line, detail };
        let rec: DocumentRecord = serde_json::from_str(raw).map_err(|e| schema(e.to_string()))?;
        let id = doc_id(&rec.source_id, &rec.body);
        if let Some(stored) = &rec.doc_id {
            if *stored != id {
                return Err(schema(format!("doc_id {stored} does not match body")));
            }
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId { path: path.into(), id });
        }
        out.push(Document {
            doc_id: id,
            source_id: rec.source_id,
            category: rec.category,
            title: rec.title,
            char_len: rec.body.chars().count(),
            byte_len: rec.body.len(),
            body: rec.body,
            observed_at: rec.observed_at,
        });
    }
    Ok(out)
}

pub fn documents_jsonl(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        out.push_str(&serde_json::to_string(&DocumentRecord::from(d)).expect("document serializes"));
        out.push('\n');
    }
    out
}

/// Load and validate forecasting questions.
pub fn load_questions(path: &Path) -> Result<Vec<Question>> {
    parse_questions(&read(path)?, path)
}

pub fn parse_questions(text: &str, path: &Path) -> Result<Vec<Question>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, raw) in jsonl_lines(text) {
        let schema = |detail: String| Error::Schema { path: path.into(), line, detail };
        let q: Question = serde_json::from_str(raw).map_err(|e| schema(e.to_string()))?;
        q.validate().map_err(|e| schema(e.to_string()))?;
        if !seen.insert(q.question_id.clone()) {
            return Err(Error::DuplicateId { path: path.into(), id: q.question_id });
        }
        out.push(q);
    }
    Ok(out)
}

/// One model's row in an attribute CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelAttributeRow {
    pub model_name: String,
    pub size_params: Option<f64>,
    pub release_date: Option<NaiveDate>,
    pub external_scores: BTreeMap<String, f64>,
}

/// Parse `model,size_params,release_date,<benchmark>...`. Empty cells mean
/// the value is unknown. Sizes accept a B/M suffix ("7B", "1.3B", "350M").
pub fn load_attributes(path: &Path) -> Result<Vec<ModelAttributeRow>> {
    parse_attributes(&read(path)?, path)
}

pub fn parse_attributes(text: &str, path: &Path) -> Result<Vec<ModelAttributeRow>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let schema = |line: usize, detail: String| Error::Schema { path: path.into(), line, detail };
    let headers = rdr.headers().map_err(|e| schema(1, e.to_string()))?.clone();
    let expected = ["model", "size_params", "release_date"];
    if headers.len() < 3 || headers.iter().take(3).ne(expected) {
        return Err(schema(1, format!("header must start with {}", expected.join(","))));
    }
    let benchmarks: Vec<String> = headers.iter().skip(3).map(str::to_string).collect();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| schema(line, e.to_string()))?;
        let model_name = rec[0].to_string();
        if !seen.insert(model_name.clone()) {
            return Err(Error::DuplicateId { path: path.into(), id: model_name });
        }
        let size_params = match &rec[1] {
            "" => None,
            s => Some(parse_size(s).ok_or_else(|| schema(line, format!("bad size {s:?}")))?),
        };
        let release_date = match &rec[2] {
            "" => None,
            s => Some(parse_month_or_date(s).ok_or_else(|| schema(line, format!("bad date {s:?}")))?),
        };
        let mut external_scores = BTreeMap::new();
        for (name, cell) in benchmarks.iter().zip(rec.iter().skip(3)) {
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| schema(line, format!("bad {name} score {cell:?}")))?;
            if !v.is_finite() {
                return Err(schema(line, format!("{name} score is not finite")));
            }
            external_scores.insert(name.clone(), v);
        }
        out.push(ModelAttributeRow {
            model_name,
            size_params,
            release_date,
            external_scores,
        });
    }
    Ok(out)
}

/// "7B" → 7e9, "350M" → 3.5e8, "1300000000" → 1.3e9.
pub fn parse_size(s: &str) -> Option<f64> {
    let s = s.trim();
    let (num, scale) = match s.chars().last()? {
        'B' | 'b' => (&s[..s.len() - 1], 1e9),
        'M' | 'm' => (&s[..s.len() - 1], 1e6),
        'K' | 'k' => (&s[..s.len() - 1], 1e3),
        _ => (s, 1.0),
    };
    let v: f64 = num.trim().parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v * scale)
}

/// `YYYY-MM-DD`, or `YYYY-MM` meaning the first of the month.
pub fn parse_month_or_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .or_else(|| NaiveDate::parse_from_str(&format!("{s}-01"), "%Y-%m-%d").ok())
}

/// Parameter count taken from a model name such as "Qwen-14B-Chat" or
/// "TinyLLaMA-1.1B-Chat": the first number directly followed by "B".
pub fn size_from_name(name: &str) -> Option<f64> {
    let bytes = name.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i].is_ascii_digit() && (i == 0 || !bytes[i - 1].is_ascii_alphanumeric() && bytes[i - 1] != b'.') {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            let after = bytes.get(i).copied();
            let boundary = bytes.get(i + 1).is_none_or(|b| !b.is_ascii_alphanumeric());
            if matches!(after, Some(b'B') | Some(b'b')) && boundary {
                return name[start..i].parse::<f64>().ok().map(|v| v * 1e9);
            }
        } else {
            i += 1;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_from_names() {
        assert_eq!(size_from_name("OPT-13B"), Some(13e9));
        assert_eq!(size_from_name("TinyLLaMA-1.1B-Chat-v0.6"), Some(1.1e9));
        assert_eq!(size_from_name("Qwen-1.8B-Chat"), Some(1.8e9));
        assert_eq!(size_from_name("Mixtral-8x22B-Instruct-v0.1"), None);
        assert_eq!(size_from_name("Phi-2"), None);
        assert_eq!(size_from_name("Zhongjing-Base"), None);
        assert_eq!(size_from_name("RWKV-v5-Eagle-7B"), Some(7e9));
        assert_eq!(size_from_name("LLaMA2-7B-Chat"), Some(7e9));
    }

    #[test]
    fn size_suffixes() {
        assert_eq!(parse_size("7B"), Some(7e9));
        assert_eq!(parse_size("350M"), Some(350e6));
        assert_eq!(parse_size("2700000000"), Some(2.7e9));
        assert_eq!(parse_size("-1"), None);
        assert_eq!(parse_size("x"), None);
    }

    #[test]
    fn attribute_csv() {
        let text = "model,size_params,release_date,MMLU\nA,7B,2023-07,45.3\nB,,2023-09-15,\n";
        let rows = parse_attributes(text, Path::new("a.csv")).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].size_params, Some(7e9));
        assert_eq!(rows[0].release_date, NaiveDate::from_ymd_opt(2023, 7, 1));
        assert_eq!(rows[0].external_scores["MMLU"], 45.3);
        assert!(rows[1].size_params.is_none());
        assert!(rows[1].external_scores.is_empty());
        assert!(parse_attributes("name,size\n", Path::new("a.csv")).is_err());
        assert!(matches!(
            parse_attributes("model,size_params,release_date\nA,1B,\nA,2B,\n", Path::new("a.csv")),
            Err(Error::DuplicateId { .. })
        ));
    }
}
