//! Time-stamped documents: preprocessing, period bucketing, seeded
//! sampling, and judge-based recency classification.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calendar::{add_months, months_floor};
use crate::gateway::{ChatBackend, CompletionParams, GatewayError};
use crate::rng::SplitMix64;

/// Documents shorter than this many characters are rejected.
pub const MIN_CHARS: usize = 100;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    News,
    Encyclopedia,
    AcademicStem,
    AcademicNonstem,
    Qa,
    Code,
    #[default]
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub source_id: String,
    pub category: Category,
    pub title: Option<String>,
    pub body: String,
    pub observed_at: NaiveDate,
    pub char_len: usize,
    pub byte_len: usize,
}

/// Everything about a document except its text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentMeta {
    pub source_id: String,
    pub category: Category,
    pub title: Option<String>,
    pub observed_at: NaiveDate,
}

impl DocumentMeta {
    pub fn new(source_id: impl Into<String>, observed_at: NaiveDate) -> Self {
        Self {
            source_id: source_id.into(),
            category: Category::Other,
            title: None,
            observed_at,
        }
    }

    pub fn category(mut self, category: Category) -> Self {
        self.category = category;
        self
    }

    pub fn title(mut self, title: impl Into<String>) -> Self {
        self.title = Some(title.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum Rejection {
    #[error("text too short: {chars} characters after cleaning, need {MIN_CHARS}")]
    TooShort { chars: usize },
}

/// Content hash identifying a document: SHA-256 over the source id, a unit
/// separator, and the cleaned body, truncated to 128 bits.
pub fn doc_id(source_id: &str, body: &str) -> String {
    let mut h = Sha256::new();
    h.update(source_id.as_bytes());
    h.update([0x1f]);
    h.update(body.as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(32);
    for b in &digest[..16] {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// Strip markup, normalize whitespace, and enforce the length threshold.
pub fn preprocess(raw: &str, meta: DocumentMeta) -> Result<Document, Rejection> {
    let body = clean_text(raw);
    let char_len = body.chars().count();
    if char_len < MIN_CHARS {
        return Err(Rejection::TooShort { chars: char_len });
    }
    Ok(Document {
        doc_id: doc_id(&meta.source_id, &body),
        byte_len: body.len(),
        char_len,
        body,
        source_id: meta.source_id,
        category: meta.category,
        title: meta.title,
        observed_at: meta.observed_at,
    })
}

/// The cleaning half of [`preprocess`], iterated to a fixed point so that
/// cleaning already-clean text is the identity.
pub fn clean_text(raw: &str) -> String {
    let mut cur = clean_once(raw);
    loop {
        let next = clean_once(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn clean_once(raw: &str) -> String {
    let stripped = strip_markup(raw);
    let decoded = decode_safe_entities(&stripped);
    collapse_whitespace(&decoded)
}

fn collapse_whitespace(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Remove comments, `script`/`style` elements with their contents, and any
/// other tag. A `<` that does not open a tag is kept as text.
fn strip_markup(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('<') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        if let Some(after) = tail.strip_prefix("<!--") {
            match after.find("-->") {
                Some(end) => {
                    out.push(' ');
                    rest = &after[end + 3..];
                }
                None => rest = "",
            }
            continue;
        }
        let opens_tag = tail[1..]
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '/' || c == '!' || c == '?');
        let close = tail.find('>');
        match (opens_tag, close) {
            (true, Some(end)) => {
                let name = tag_name(&tail[1..end]);
                let after = &tail[end + 1..];
                if name.eq_ignore_ascii_case("script") || name.eq_ignore_ascii_case("style") {
                    rest = skip_raw_element(after, &name);
                } else {
                    rest = after;
                }
                out.push(' ');
            }
            _ => {
                out.push('<');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn tag_name(inner: &str) -> String {
    inner
        .trim_start_matches('/')
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect()
}

fn skip_raw_element<'a>(s: &'a str, name: &str) -> &'a str {
    let lower = s.to_ascii_lowercase();
    let needle = format!("</{}", name.to_ascii_lowercase());
    match lower.find(&needle) {
        Some(i) => match s[i..].find('>') {
            Some(j) => &s[i + j + 1..],
            None => "",
        },
        None => "",
    }
}

/// Decode entities whose expansion cannot start new markup or a new entity.
/// `&amp;`, `&lt;` and `&gt;` stay encoded.
fn decode_safe_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(pos) = rest.find('&') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos..];
        let semi = tail[1..].find(';').map(|i| i + 1).filter(|&i| i <= 10);
        let decoded = semi.and_then(|i| decode_entity(&tail[1..i]).map(|c| (c, i)));
        match decoded {
            Some((c, i)) if !matches!(c, '&' | '<' | '>') => {
                out.push(c);
                rest = &tail[i + 1..];
            }
            _ => {
                // keep the whole entity so its tail is not re-read as text
                let end = semi.map(|i| i + 1).unwrap_or(1);
                out.push_str(&tail[..end]);
                rest = &tail[end..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn decode_entity(name: &str) -> Option<char> {
    match name {
        "nbsp" => Some(' '),
        "quot" => Some('"'),
        "apos" => Some('\''),
        "amp" => Some('&'),
        "lt" => Some('<'),
        "gt" => Some('>'),
        "mdash" => Some('\u{2014}'),
        "ndash" => Some('\u{2013}'),
        "hellip" => Some('\u{2026}'),
        _ => {
            let num = name.strip_prefix('#')?;
            let code = match num.strip_prefix(['x', 'X']) {
                Some(hex) => u32::from_str_radix(hex, 16).ok()?,
                None => num.parse().ok()?,
            };
            char::from_u32(code)
        }
    }
}

/// Regular grid of calendar-month buckets starting at `origin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeriodGrid {
    pub origin: NaiveDate,
    pub interval_months: u32,
    /// Exclusive end; when absent the grid extends to the latest document.
    pub end: Option<NaiveDate>,
}

impl PeriodGrid {
    pub fn new(origin: NaiveDate, interval_months: u32) -> Self {
        assert!(interval_months >= 1, "interval must be at least one month");
        Self { origin, interval_months, end: None }
    }

    pub fn until(mut self, end: NaiveDate) -> Self {
        self.end = Some(end);
        self
    }

    /// Bucket index of `date`; negative before the origin.
    pub fn index_of(&self, date: NaiveDate) -> i64 {
        months_floor(self.origin, date).div_euclid(self.interval_months as i64)
    }

    pub fn bucket(&self, index: i64) -> PeriodBucket {
        let step = self.interval_months as i64;
        PeriodBucket {
            index,
            start: add_months(self.origin, index * step),
            end: add_months(self.origin, (index + 1) * step),
            interval_months: self.interval_months,
            pre_grid: false,
        }
    }

    fn pre_grid_bucket(&self) -> PeriodBucket {
        PeriodBucket {
            index: -1,
            start: NaiveDate::MIN,
            end: self.origin,
            interval_months: self.interval_months,
            pre_grid: true,
        }
    }
}

/// `[start, end)` on a grid. The synthetic pre-grid bucket collects
/// documents observed before the grid origin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PeriodBucket {
    pub index: i64,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub interval_months: u32,
    pub pre_grid: bool,
}

impl PeriodBucket {
    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date < self.end
    }
}

/// Assign each document to its bucket. Every grid bucket between the origin
/// and the grid end (or the latest document) is present, empty or not.
pub fn bucketize(docs: &[Document], grid: &PeriodGrid) -> BTreeMap<PeriodBucket, Vec<Document>> {
    let mut out: BTreeMap<PeriodBucket, Vec<Document>> = BTreeMap::new();
    let last = match grid.end {
        Some(end) => grid.index_of(end.pred_opt().unwrap_or(end)),
        None => docs.iter().map(|d| grid.index_of(d.observed_at)).max().unwrap_or(-1),
    };
    for i in 0..=last {
        out.insert(grid.bucket(i), Vec::new());
    }
    for doc in docs {
        let idx = grid.index_of(doc.observed_at);
        let bucket = if idx < 0 { grid.pre_grid_bucket() } else { grid.bucket(idx) };
        out.entry(bucket).or_default().push(doc.clone());
    }
    out
}

/// Seeded uniform sample of `k` documents without replacement, returned in
/// `doc_id` order. With `k >= docs.len()` every document is returned.
pub fn sample(docs: &[Document], k: usize, seed: u64) -> Vec<Document> {
    assert!(k >= 1, "sample size must be positive");
    let mut pool: Vec<&Document> = docs.iter().collect();
    pool.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    if pool.len() > k {
        let mut rng = SplitMix64::new(seed);
        for i in 0..k {
            let j = i + rng.below((pool.len() - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    }
    pool.into_iter().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Recency {
    Recent,
    Historical,
    Other,
}

/// Characters of document body sent to the judge by default.
pub const RECENCY_CHAR_BUDGET: usize = 4000;

pub const RECENCY_PROMPT: &str = "\
Read the following text and decide what kind of content it is.

Recent: reports on events or developments that were new when the text was written.
Historical: describes past events, people or periods that were already history when written.
Other: general, educational or evergreen material not tied to specific events.

Reply with exactly one word: Recent, Historical, or Other.

Text:
{text}";

pub fn recency_prompt(doc: &Document, char_budget: usize) -> String {
    let text: String = doc.body.chars().take(char_budget).collect();
    RECENCY_PROMPT.replace("{text}", &text)
}

/// Label named earliest in the reply, matched case-insensitively.
pub fn parse_recency(reply: &str) -> Option<Recency> {
    let lower = reply.to_lowercase();
    [
        ("recent", Recency::Recent),
        ("historical", Recency::Historical),
        ("other", Recency::Other),
    ]
    .into_iter()
    .filter_map(|(word, label)| lower.find(word).map(|pos| (pos, label)))
    .min_by_key(|&(pos, _)| pos)
    .map(|(_, label)| label)
}

/// Ask `judge` whether `doc` is recent news, historical material or neither.
/// Unparseable replies count as [`Recency::Other`] and are logged.
pub fn classify_recency(judge: &dyn ChatBackend, doc: &Document, char_budget: usize) -> Result<Recency, GatewayError> {
    let prompt = recency_prompt(doc, char_budget);
    let reply = judge.complete(&prompt, &CompletionParams { max_tokens: 8, temperature: 0.0 })?;
    Ok(match parse_recency(&reply) {
        Some(label) => label,
        None => {
            log::warn!("unparseable recency label {:?} for {}", reply, doc.doc_id);
            Recency::Other
        }
    })
}

/// Share of each label, in label order. Empty input yields an empty list.
pub fn recency_proportions(labels: &[Recency]) -> Vec<(Recency, f64)> {
    let mut counts: BTreeMap<Recency, usize> = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    let n = labels.len() as f64;
    counts.into_iter().map(|(l, c)| (l, c as f64 / n)).collect()
}
