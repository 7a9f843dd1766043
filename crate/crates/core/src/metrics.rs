//! Bits per character, accuracy, percentage change and decline classes.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::gateway::ScoredText;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("denominator is zero")]
    ZeroLength,
    #[error("no values to aggregate")]
    EmptyInput,
    #[error("values mix byte and character denominators")]
    MixedMode,
    #[error("base value is zero")]
    ZeroBase,
    #[error("negative log-likelihood is not finite")]
    NonFinite,
    #[error("{correct} correct out of {total} is not a valid sample")]
    InvalidCounts { correct: u64, total: u64 },
}

/// Length used to normalize the log-likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenomMode {
    #[default]
    Utf8Bytes,
    UnicodeChars,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BpcValue {
    pub bits_per_char: f64,
    pub nll_bits: f64,
    pub denom: u64,
    pub denom_mode: DenomMode,
    pub missing_tokens: u64,
}

/// Total negative log-likelihood in bits over the text length.
pub fn bpc(scored: &ScoredText, mode: DenomMode) -> Result<BpcValue, MetricError> {
    if !scored.total_nll_nats.is_finite() {
        return Err(MetricError::NonFinite);
    }
    let denom = match mode {
        DenomMode::Utf8Bytes => scored.byte_len,
        DenomMode::UnicodeChars => scored.char_len,
    } as u64;
    if denom == 0 {
        return Err(MetricError::ZeroLength);
    }
    let nll_bits = scored.total_nll_nats / core::f64::consts::LN_2;
    Ok(BpcValue {
        bits_per_char: nll_bits / denom as f64,
        nll_bits,
        denom,
        denom_mode: mode,
        missing_tokens: scored.missing_tokens() as u64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Pooled bits over pooled length.
    #[default]
    Micro,
    /// Mean of per-document values.
    Macro,
}

pub fn aggregate_bpc(values: &[BpcValue], style: Aggregation) -> Result<f64, MetricError> {
    let first = values.first().ok_or(MetricError::EmptyInput)?;
    if values.iter().any(|v| v.denom_mode != first.denom_mode) {
        return Err(MetricError::MixedMode);
    }
    Ok(match style {
        Aggregation::Micro => {
            let bits: f64 = values.iter().map(|v| v.nll_bits).sum();
            let denom: u64 = values.iter().map(|v| v.denom).sum();
            bits / denom as f64
        }
        Aggregation::Macro => values.iter().map(|v| v.bits_per_char).sum::<f64>() / values.len() as f64,
    })
}

/// Correct predictions out of a nonempty total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccSample {
    pub n_correct: u64,
    pub n_total: u64,
}

impl AccSample {
    pub fn new(n_correct: u64, n_total: u64) -> Result<Self, MetricError> {
        if n_total == 0 || n_correct > n_total {
            return Err(MetricError::InvalidCounts { correct: n_correct, total: n_total });
        }
        Ok(Self { n_correct, n_total })
    }

    pub fn acc(&self) -> f64 {
        self.n_correct as f64 / self.n_total as f64
    }

    /// Count-pooled union of two samples.
    pub fn pool(self, other: Self) -> Self {
        Self {
            n_correct: self.n_correct + other.n_correct,
            n_total: self.n_total + other.n_total,
        }
    }
}

pub fn accuracy(outcomes: &[bool]) -> Result<AccSample, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let correct = outcomes.iter().filter(|&&c| c).count() as u64;
    AccSample::new(correct, outcomes.len() as u64)
}

/// `(value - base) / base * 100`.
pub fn pct_change(base: f64, value: f64) -> Result<f64, MetricError> {
    if base == 0.0 {
        return Err(MetricError::ZeroBase);
    }
    Ok((value - base) / base * 100.0)
}

/// Declines below this percentage are stable.
pub const STABLE_BELOW_PCT: f64 = 31.0;
/// Declines above this percentage are degraded.
pub const DEGRADED_ABOVE_PCT: f64 = 39.0;

// Percentages within this distance of a threshold count as on it, so that
// inputs like (1.00, 0.61) land on the boundary despite binary rounding.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclineClass {
    Stable,
    Moderate,
    Degraded,
}

impl DeclineClass {
    pub fn of_pct(decline_pct: f64) -> Self {
        if decline_pct < STABLE_BELOW_PCT - THRESHOLD_SLACK {
            DeclineClass::Stable
        } else if decline_pct > DEGRADED_ABOVE_PCT + THRESHOLD_SLACK {
            DeclineClass::Degraded
        } else {
            DeclineClass::Moderate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclineReport {
    pub pre_acc: f64,
    pub post_acc: f64,
    pub decline_abs: f64,
    pub decline_pct: f64,
    pub class: DeclineClass,
}

pub fn classify_decline(pre_acc: f64, post_acc: f64) -> Result<DeclineReport, MetricError> {
    if pre_acc == 0.0 {
        return Err(MetricError::ZeroBase);
    }
    let decline_abs = pre_acc - post_acc;
    let decline_pct = decline_abs / pre_acc * 100.0;
    Ok(DeclineReport {
        pre_acc,
        post_acc,
        decline_abs,
        decline_pct,
        class: DeclineClass::of_pct(decline_pct),
    })
}

/// Per-value BPC for every scored document.
pub fn bpc_all(scored: &[ScoredText], mode: DenomMode) -> Result<Vec<BpcValue>, MetricError> {
    scored.iter().map(|s| bpc(s, mode)).collect()
}
