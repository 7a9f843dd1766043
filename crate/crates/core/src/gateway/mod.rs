//! Uniform access to models under test.
//!
//! A backend exposes two capabilities, each as its own trait:
//! [`LogprobBackend`] for echo-style token scoring and [`ChatBackend`] for
//! completions. [`score_text`] drives segmentation and scoring of a whole
//! document. Network implementations live in the `tempora` crate; the
//! deterministic mocks in [`mock`] live here.

mod mock;
mod tokenize;

pub use mock::{TableMock, UniformMock, UnigramMock};
pub use tokenize::{CharTokenizer, Span, Tokenizer, WhitespaceTokenizer};

use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;

pub const DEFAULT_CONTEXT_TOKENS: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("transport error at {endpoint}: {detail}")]
    Transport { endpoint: String, detail: String },
    #[error("protocol mismatch: {0}")]
    ProtocolMismatch(String),
    #[error("credential variable {0} is not set")]
    AuthMissing(String),
    #[error("cannot segment empty text")]
    EmptyText,
    #[error("max_tokens must be at least 2, got {0}")]
    ContextTooSmall(usize),
    #[error("backend does not support {0}")]
    Unsupported(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    LogprobHttp,
    ChatHttp,
    MockUniform,
    MockTable,
}

/// A model under test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    pub release_date: Option<NaiveDate>,
    #[serde(default)]
    pub size_params: Option<u64>,
    pub backend_kind: BackendKind,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub auth_ref: Option<String>,
    #[serde(default = "default_context")]
    pub max_context_tokens: usize,
}

fn default_context() -> usize {
    DEFAULT_CONTEXT_TOKENS
}

/// One scored token. `byte_span` indexes the UTF-8 bytes of its segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token_text: String,
    pub logprob_nats: f64,
    pub byte_span: (usize, usize),
    /// The backend gave no logprob for this token; `logprob_nats` is 0.
    pub missing: bool,
}

impl TokenScore {
    pub fn scored(token_text: impl Into<String>, logprob_nats: f64, byte_span: (usize, usize)) -> Self {
        Self {
            token_text: token_text.into(),
            logprob_nats,
            byte_span,
            missing: false,
        }
    }

    pub fn unscored(token_text: impl Into<String>, byte_span: (usize, usize)) -> Self {
        Self {
            token_text: token_text.into(),
            logprob_nats: 0.0,
            byte_span,
            missing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSegment {
    pub tokens: Vec<TokenScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredText {
    pub doc_id: String,
    pub model_name: String,
    pub segments: Vec<ScoredSegment>,
    pub total_nll_nats: f64,
    pub char_len: usize,
    pub byte_len: usize,
}

impl ScoredText {
    pub fn missing_tokens(&self) -> usize {
        self.tokens().filter(|t| t.missing).count()
    }

    pub fn token_count(&self) -> usize {
        self.tokens().count()
    }

    fn tokens(&self) -> impl Iterator<Item = &TokenScore> {
        self.segments.iter().flat_map(|s| s.tokens.iter())
    }
}

/// A contiguous byte range of the source text holding at most
/// `max_tokens` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub tokens: usize,
}

/// Greedy left-to-right split of `text` at token boundaries.
///
/// `spans` are the token byte spans of the whole text; they must be ordered
/// and non-overlapping. Segment boundaries fall on span starts, so the
/// segments tile `text` exactly (gaps between tokens stay with the
/// preceding segment).
pub fn segment_spans(text: &str, spans: &[Span], max_tokens: usize) -> Result<Vec<Segment>, GatewayError> {
    if text.is_empty() {
        return Err(GatewayError::EmptyText);
    }
    if max_tokens < 2 {
        return Err(GatewayError::ContextTooSmall(max_tokens));
    }
    check_spans(spans, text.len())?;
    if spans.is_empty() {
        return Ok(alloc::vec![Segment { start: 0, end: text.len(), tokens: 0 }]);
    }
    let mut segments = Vec::with_capacity(spans.len() / max_tokens + 1);
    let mut start = 0;
    for (i, chunk) in spans.chunks(max_tokens).enumerate() {
        let end = spans
            .get((i + 1) * max_tokens)
            .map(|next| next.start)
            .unwrap_or(text.len());
        segments.push(Segment { start, end, tokens: chunk.len() });
        start = end;
    }
    Ok(segments)
}

/// Tokenize with `tokenizer`, then [`segment_spans`].
pub fn segment(text: &str, max_tokens: usize, tokenizer: &dyn Tokenizer) -> Result<Vec<Segment>, GatewayError> {
    if text.is_empty() {
        return Err(GatewayError::EmptyText);
    }
    let spans = tokenizer.spans(text);
    segment_spans(text, &spans, max_tokens)
}

fn check_spans(spans: &[Span], len: usize) -> Result<(), GatewayError> {
    let mut prev_end = 0;
    for s in spans {
        if s.start < prev_end || s.end < s.start || s.end > len {
            return Err(GatewayError::ProtocolMismatch(alloc::format!(
                "token span {}..{} out of order or out of bounds",
                s.start,
                s.end
            )));
        }
        prev_end = s.end;
    }
    Ok(())
}

/// Echo-style scoring: the backend returns a logprob for every token of the
/// submitted text, scored with no context beyond the text itself.
pub trait LogprobBackend: Send + Sync {
    /// Token byte spans of `text` in the backend's own tokenization.
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError>;

    /// Score one segment. Spans in the result index the segment's bytes.
    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionParams {
    pub max_tokens: u32,
    pub temperature: f64,
}

impl Default for CompletionParams {
    fn default() -> Self {
        Self { max_tokens: 64, temperature: 0.0 }
    }
}

pub trait ChatBackend: Send + Sync {
    /// Response text verbatim. Refusals are ordinary text, not errors.
    fn complete(&self, prompt: &str, params: &CompletionParams) -> Result<String, GatewayError>;
}

/// Score a document segment by segment.
///
/// Tokens the backend could not score are kept with `missing = true` and
/// contribute nothing to `total_nll_nats`; the document's lengths are
/// copied through unchanged.
pub fn score_text(
    backend: &dyn LogprobBackend,
    model_name: &str,
    max_context_tokens: usize,
    doc: &Document,
) -> Result<ScoredText, GatewayError> {
    let text = doc.body.as_str();
    let spans = backend.tokenize(text)?;
    let plan = segment_spans(text, &spans, max_context_tokens)?;

    let mut segments = Vec::with_capacity(plan.len());
    let mut total = 0.0;
    for seg in &plan {
        let piece = &text[seg.start..seg.end];
        let tokens = backend.score_segment(piece)?;
        validate_segment(piece, &tokens, max_context_tokens)?;
        total += tokens.iter().filter(|t| !t.missing).map(|t| -t.logprob_nats).sum::<f64>();
        segments.push(ScoredSegment { tokens });
    }

    Ok(ScoredText {
        doc_id: doc.doc_id.clone(),
        model_name: model_name.into(),
        segments,
        total_nll_nats: total,
        char_len: doc.char_len,
        byte_len: doc.byte_len,
    })
}

fn validate_segment(piece: &str, tokens: &[TokenScore], max_tokens: usize) -> Result<(), GatewayError> {
    if tokens.len() > max_tokens {
        return Err(GatewayError::ProtocolMismatch(alloc::format!(
            "segment scored as {} tokens, limit is {}",
            tokens.len(),
            max_tokens
        )));
    }
    let mut prev_end = 0;
    for t in tokens {
        let (s, e) = t.byte_span;
        if s < prev_end || e < s || e > piece.len() {
            return Err(GatewayError::ProtocolMismatch(alloc::format!(
                "token {:?} has span {}..{} inconsistent with the echoed text",
                t.token_text,
                s,
                e
            )));
        }
        if !t.missing && (t.logprob_nats.is_nan() || t.logprob_nats > 0.0) {
            return Err(GatewayError::ProtocolMismatch(alloc::format!(
                "token {:?} has positive or undefined logprob {}",
                t.token_text,
                t.logprob_nats
            )));
        }
        prev_end = e;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn chars(n: usize) -> String {
        (0..n).map(|i| (b'a' + (i % 26) as u8) as char).collect()
    }

    #[test]
    fn segments_5000_chars_at_2048() {
        let text = chars(5000);
        let segs = segment(&text, 2048, &CharTokenizer).unwrap();
        let counts: Vec<usize> = segs.iter().map(|s| s.tokens).collect();
        assert_eq!(counts, [2048, 2048, 904]);
    }

    #[test]
    fn short_text_is_one_segment() {
        let segs = segment("abcdefghij", 2048, &CharTokenizer).unwrap();
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].tokens, 10);
    }

    #[test]
    fn empty_text_rejected() {
        assert_eq!(segment("", 2048, &CharTokenizer), Err(GatewayError::EmptyText));
    }

    #[test]
    fn tiny_context_rejected() {
        assert_eq!(segment("abc", 1, &CharTokenizer), Err(GatewayError::ContextTooSmall(1)));
    }

    #[test]
    fn segments_tile_text_with_whitespace_tokens() {
        let text = "  alpha beta\tgamma  delta ";
        let segs = segment(text, 2, &WhitespaceTokenizer).unwrap();
        let rebuilt: String = segs.iter().map(|s| &text[s.start..s.end]).collect();
        assert_eq!(rebuilt, text);
        assert!(segs.iter().all(|s| s.tokens <= 2));
    }

    #[test]
    fn multibyte_segments_stay_on_char_boundaries() {
        let text = "héllo wörld ünïcode ✓✓✓";
        let segs = segment(text, 3, &CharTokenizer).unwrap();
        let rebuilt: String = segs.iter().map(|s| text[s.start..s.end].to_string()).collect();
        assert_eq!(rebuilt, text);
    }
}
