//! Deterministic backends for tests and offline runs.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{ChatBackend, CompletionParams, GatewayError, LogprobBackend, Span, TokenScore, Tokenizer};
use crate::gateway::CharTokenizer;

fn score_with(
    tokenizer: &dyn Tokenizer,
    segment: &str,
    omit_first: bool,
    mut logprob: impl FnMut(&str) -> f64,
) -> Vec<TokenScore> {
    tokenizer
        .spans(segment)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let text = &segment[s.start..s.end];
            if omit_first && i == 0 {
                TokenScore::unscored(text, (s.start, s.end))
            } else {
                TokenScore::scored(text, logprob(text), (s.start, s.end))
            }
        })
        .collect()
}

/// Every token has probability `1 / vocab`.
pub struct UniformMock {
    vocab: u32,
    tokenizer: Box<dyn Tokenizer>,
    omit_first: bool,
}

impl UniformMock {
    pub fn new(vocab: u32) -> Self {
        assert!(vocab >= 1, "vocabulary must be nonempty");
        Self {
            vocab,
            tokenizer: Box::new(CharTokenizer),
            omit_first: false,
        }
    }

    pub fn with_tokenizer(mut self, tokenizer: impl Tokenizer + 'static) -> Self {
        self.tokenizer = Box::new(tokenizer);
        self
    }

    /// Behave like a backend without a begin-of-sequence token: the first
    /// token of every segment comes back without a logprob.
    pub fn omitting_first_token(mut self) -> Self {
        self.omit_first = true;
        self
    }
}

impl LogprobBackend for UniformMock {
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError> {
        Ok(self.tokenizer.spans(text))
    }

    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError> {
        let lp = -libm::log(self.vocab as f64);
        Ok(score_with(&*self.tokenizer, segment, self.omit_first, |_| lp))
    }
}

/// Lookup-table backend: per-token probabilities for scoring and
/// prompt-to-response pairs for completion.
pub struct TableMock {
    token_probs: BTreeMap<String, f64>,
    default_prob: f64,
    responses: BTreeMap<String, String>,
    default_response: String,
    tokenizer: Box<dyn Tokenizer>,
}

impl Default for TableMock {
    fn default() -> Self {
        Self {
            token_probs: BTreeMap::new(),
            default_prob: 1.0,
            responses: BTreeMap::new(),
            default_response: String::new(),
            tokenizer: Box::new(CharTokenizer),
        }
    }
}

impl TableMock {
    /// Probability 1 for every token: a model that is never surprised.
    pub fn delta() -> Self {
        Self::default()
    }

    pub fn with_token_prob(mut self, token: impl Into<String>, prob: f64) -> Self {
        self.token_probs.insert(token.into(), prob);
        self
    }

    pub fn with_default_prob(mut self, prob: f64) -> Self {
        self.default_prob = prob;
        self
    }

    pub fn with_response(mut self, prompt: impl Into<String>, response: impl Into<String>) -> Self {
        self.responses.insert(prompt.into(), response.into());
        self
    }

    pub fn with_default_response(mut self, response: impl Into<String>) -> Self {
        self.default_response = response.into();
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: impl Tokenizer + 'static) -> Self {
        self.tokenizer = Box::new(tokenizer);
        self
    }
}

impl LogprobBackend for TableMock {
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError> {
        Ok(self.tokenizer.spans(text))
    }

    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError> {
        Ok(score_with(&*self.tokenizer, segment, false, |tok| {
            let p = self.token_probs.get(tok).copied().unwrap_or(self.default_prob);
            libm::log(p)
        }))
    }
}

impl ChatBackend for TableMock {
    fn complete(&self, prompt: &str, _params: &CompletionParams) -> Result<String, GatewayError> {
        Ok(self
            .responses
            .get(prompt)
            .cloned()
            .unwrap_or_else(|| self.default_response.clone()))
    }
}

/// Add-one smoothed unigram model fitted on a training corpus.
///
/// `P(t) = (count(t) + 1) / (N + V)` where `V` is the declared vocabulary
/// size; `V` must cover every token the model will be asked to score for
/// the probabilities to sum to one.
#[derive(Debug, Clone)]
pub struct UnigramMock {
    counts: BTreeMap<String, u64>,
    total: u64,
    vocab_size: u64,
}

impl UnigramMock {
    pub fn train<'a>(texts: impl IntoIterator<Item = &'a str>, tokenizer: &dyn Tokenizer, vocab_size: u64) -> Self {
        let mut counts = BTreeMap::new();
        let mut total = 0;
        for text in texts {
            for s in tokenizer.spans(text) {
                *counts.entry(text[s.start..s.end].to_string()).or_insert(0) += 1;
                total += 1;
            }
        }
        assert!(
            vocab_size >= counts.len() as u64,
            "declared vocabulary smaller than observed token types"
        );
        Self { counts, total, vocab_size }
    }

    pub fn prob(&self, token: &str) -> f64 {
        let c = self.counts.get(token).copied().unwrap_or(0);
        (c + 1) as f64 / (self.total + self.vocab_size) as f64
    }
}

impl LogprobBackend for UnigramMock {
    fn tokenize(&self, text: &str) -> Result<Vec<Span>, GatewayError> {
        Ok(CharTokenizer.spans(text))
    }

    fn score_segment(&self, segment: &str) -> Result<Vec<TokenScore>, GatewayError> {
        Ok(score_with(&CharTokenizer, segment, false, |tok| libm::log(self.prob(tok))))
    }
}
