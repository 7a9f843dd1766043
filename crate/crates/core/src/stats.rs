//! Normal CDF, the one-sided two-proportion test, the bias and degeneration
//! tests built on it, and Pearson correlation.
//!
//! The test statistic uses unpooled variances and no continuity correction:
//!
//! ```text
//! z = (acc1 - acc2) / sqrt(acc1 (1 - acc1) / n1 + acc2 (1 - acc2) / n2)
//! p = 1 - Phi(z)
//! ```

use serde::{Deserialize, Serialize};

use crate::metrics::AccSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("argument is not finite")]
    NonFinite,
    #[error("sample has no observations")]
    ZeroSample,
    #[error("inputs have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 pairs, found {0}")]
    TooFewPoints(usize),
    #[error("input has zero variance")]
    ZeroVariance,
}

/// Standard normal CDF through the complementary error function.
pub fn phi(z: f64) -> Result<f64, StatsError> {
    if !z.is_finite() {
        return Err(StatsError::NonFinite);
    }
    Ok(0.5 * libm::erfc(-z / core::f64::consts::SQRT_2))
}

/// Upper tail `1 - Phi(z)`, computed without cancellation.
fn upper_tail(z: f64) -> f64 {
    0.5 * libm::erfc(z / core::f64::consts::SQRT_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub p: f64,
}

/// One-sided test of `acc1 > acc2`.
///
/// When both variances vanish (every accuracy is 0 or 1) the statistic is
/// undefined; the limit is used instead: p = 0.5 on a tie, 0 when `acc1`
/// is larger, 1 when smaller, with z = 0, +inf or -inf to match.
pub fn two_prop_p(a: AccSample, b: AccSample) -> Result<ZTest, StatsError> {
    if a.n_total == 0 || b.n_total == 0 {
        return Err(StatsError::ZeroSample);
    }
    let (p1, p2) = (a.acc(), b.acc());
    let var = p1 * (1.0 - p1) / a.n_total as f64 + p2 * (1.0 - p2) / b.n_total as f64;
    if var == 0.0 {
        return Ok(if p1 == p2 {
            ZTest { z: 0.0, p: 0.5 }
        } else if p1 > p2 {
            ZTest { z: f64::INFINITY, p: 0.0 }
        } else {
            ZTest { z: f64::NEG_INFINITY, p: 1.0 }
        });
    }
    let z = (p1 - p2) / libm::sqrt(var);
    Ok(ZTest { z, p: upper_tail(z) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Significance {
    None,
    S05,
    S01,
    S001,
}

impl Significance {
    pub fn of(p: f64) -> Self {
        if p < 0.001 {
            Significance::S001
        } else if p < 0.01 {
            Significance::S01
        } else if p < 0.05 {
            Significance::S05
        } else {
            Significance::None
        }
    }

    pub fn level(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    /// Present accuracy exceeds past accuracy.
    NeophiliaT1,
    /// Past accuracy exceeds present accuracy.
    NostalgiaT2,
    /// Future accuracy falls below pre-release accuracy.
    DegenerationT3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultLabel {
    ArrowForward,
    ArrowBack,
    Dash,
    DeclineStar,
}

/// Outcome of one hypothesis test. `acc_a` is the sample hypothesised to be
/// larger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test: TestKind,
    pub acc_a: AccSample,
    pub acc_b: AccSample,
    pub z: f64,
    pub p: f64,
    pub significance: Significance,
    pub label: ResultLabel,
    /// The normal approximation is doubtful: fewer than 5 expected
    /// successes or failures in one of the samples.
    pub small_sample: bool,
}

const ALPHA: f64 = 0.05;

fn small_sample(s: AccSample) -> bool {
    let n = s.n_total as f64;
    let acc = s.acc();
    (n * acc).min(n * (1.0 - acc)) < 5.0
}

fn warn_if_small(a: AccSample, b: AccSample) -> bool {
    let small = small_sample(a) || small_sample(b);
    if small {
        log::warn!(
            "normal approximation is weak for {}/{} vs {}/{}",
            a.n_correct,
            a.n_total,
            b.n_correct,
            b.n_total
        );
    }
    small
}

/// Run both one-sided bias tests and report the significant direction.
///
/// The two p-values sum to one, so at most one direction can be
/// significant. When neither is, the result carries the direction with the
/// smaller p-value and the dash label.
pub fn bias_test(past: AccSample, present: AccSample) -> Result<TestResult, StatsError> {
    let neo = two_prop_p(present, past)?;
    let nos = two_prop_p(past, present)?;
    let small = warn_if_small(past, present);
    let (test, acc_a, acc_b, zt, label) = if nos.p <= neo.p {
        (TestKind::NostalgiaT2, past, present, nos, ResultLabel::ArrowBack)
    } else {
        (TestKind::NeophiliaT1, present, past, neo, ResultLabel::ArrowForward)
    };
    let significant = zt.p < ALPHA;
    Ok(TestResult {
        test,
        acc_a,
        acc_b,
        z: zt.z,
        p: zt.p,
        significance: Significance::of(zt.p),
        label: if significant { label } else { ResultLabel::Dash },
        small_sample: small,
    })
}

/// One-sided test that `future` accuracy is below `present` accuracy.
pub fn degeneration_test(present: AccSample, future: AccSample) -> Result<TestResult, StatsError> {
    let zt = two_prop_p(present, future)?;
    let significance = Significance::of(zt.p);
    Ok(TestResult {
        test: TestKind::DegenerationT3,
        acc_a: present,
        acc_b: future,
        z: zt.z,
        p: zt.p,
        significance,
        label: if significance == Significance::None {
            ResultLabel::Dash
        } else {
            ResultLabel::DeclineStar
        },
        small_sample: warn_if_small(present, future),
    })
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64, StatsError> {
    if xs.len() != ys.len() {
        return Err(StatsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(StatsError::TooFewPoints(xs.len()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(c: u64, n: u64) -> AccSample {
        AccSample::new(c, n).unwrap()
    }

    /// Composite Simpson integration of the standard normal density over
    /// `[-12, z]`; the mass below -12 is under 1e-32.
    fn phi_oracle(z: f64) -> f64 {
        let a = -12.0;
        let n = 20_000;
        let h = (z - a) / n as f64;
        let f = |x: f64| libm::exp(-0.5 * x * x) / libm::sqrt(2.0 * core::f64::consts::PI);
        let mut acc = f(a) + f(z);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn phi_at_zero() {
        assert_eq!(phi(0.0).unwrap(), 0.5);
    }

    #[test]
    fn phi_at_975_quantile() {
        let v = phi(1.959964).unwrap();
        assert!((v - 0.975).abs() < 1e-6);
        assert!((v - phi_oracle(1.959964)).abs() < 1e-7);
    }

    #[test]
    fn phi_symmetry() {
        for z in [0.1, 0.5, 1.3, 2.7, 4.0] {
            let sum = phi(z).unwrap() + phi(-z).unwrap();
            assert!((sum - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_rejects_non_finite() {
        assert_eq!(phi(f64::NAN), Err(StatsError::NonFinite));
        assert_eq!(phi(f64::INFINITY), Err(StatsError::NonFinite));
    }

    #[test]
    fn equal_accuracies() {
        let t = two_prop_p(s(30, 100), s(30, 100)).unwrap();
        assert_eq!(t.z, 0.0);
        assert_eq!(t.p, 0.5);
    }

    #[test]
    fn sixty_vs_fifty() {
        // z = 0.1 / sqrt(0.0024 + 0.0025) = 1.428571...
        let t = two_prop_p(s(60, 100), s(50, 100)).unwrap();
        assert!((t.z - 0.1 / (0.0049f64).sqrt()).abs() < 1e-12);
        assert!((t.p - (1.0 - phi_oracle(t.z))).abs() < 1e-7);
        assert!((t.p - 0.0766).abs() < 5e-4);
    }

    #[test]
    fn three_hundred_vs_two_hundred() {
        let t = two_prop_p(s(300, 500), s(200, 500)).unwrap();
        assert!((t.z - 6.4550).abs() < 1e-3);
        assert!(t.p > 4e-11 && t.p < 7e-11, "p = {}", t.p);
    }

    #[test]
    fn degenerate_variance_limits() {
        assert_eq!(two_prop_p(s(10, 10), s(10, 10)).unwrap().p, 0.5);
        assert_eq!(two_prop_p(s(10, 10), s(0, 10)).unwrap().p, 0.0);
        assert_eq!(two_prop_p(s(0, 10), s(10, 10)).unwrap().p, 1.0);
    }

    #[test]
    fn zero_sample_rejected() {
        let empty = AccSample { n_correct: 0, n_total: 0 };
        assert_eq!(two_prop_p(empty, s(1, 2)), Err(StatsError::ZeroSample));
    }

    #[test]
    fn star_thresholds() {
        assert_eq!(Significance::of(0.0009), Significance::S001);
        assert_eq!(Significance::of(0.009), Significance::S01);
        assert_eq!(Significance::of(0.049), Significance::S05);
        assert_eq!(Significance::of(0.051), Significance::None);
        assert_eq!(Significance::of(0.05), Significance::None);
        assert_eq!(Significance::of(0.001), Significance::S01);
    }

    #[test]
    fn bias_directions() {
        let r = bias_test(s(300, 500), s(200, 500)).unwrap();
        assert_eq!((r.test, r.significance, r.label), (TestKind::NostalgiaT2, Significance::S001, ResultLabel::ArrowBack));
        let r = bias_test(s(200, 500), s(300, 500)).unwrap();
        assert_eq!(
            (r.test, r.significance, r.label),
            (TestKind::NeophiliaT1, Significance::S001, ResultLabel::ArrowForward)
        );
        let r = bias_test(s(52, 100), s(50, 100)).unwrap();
        assert_eq!(r.label, ResultLabel::Dash);
        assert_eq!(r.significance, Significance::None);
        assert!((r.z - 0.2835).abs() < 1e-3);
        assert!((r.p - 0.3884).abs() < 1e-3);
    }

    #[test]
    fn degeneration_examples() {
        let r = degeneration_test(s(330, 500), s(225, 500)).unwrap();
        let z = 0.21 / ((0.66 * 0.34 + 0.45 * 0.55) / 500.0f64).sqrt();
        assert!((r.z - z).abs() < 1e-9);
        assert!((r.z - 6.836).abs() < 1e-3);
        assert_eq!(r.significance, Significance::S001);
        assert_eq!(r.label, ResultLabel::DeclineStar);
        let r = degeneration_test(s(40, 100), s(40, 100)).unwrap();
        assert_eq!(r.p, 0.5);
        assert_eq!(r.label, ResultLabel::Dash);
    }

    #[test]
    fn small_sample_flag() {
        assert!(bias_test(s(1, 10), s(5, 10)).unwrap().small_sample);
        assert!(!bias_test(s(50, 100), s(40, 100)).unwrap().small_sample);
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert_eq!(pearson(&[1.0, 2.0], &[1.0]), Err(StatsError::LengthMismatch(2, 1)));
        assert_eq!(pearson(&[1.0], &[1.0]), Err(StatsError::TooFewPoints(1)));
        assert_eq!(pearson(&[1.0, 1.0], &[1.0, 2.0]), Err(StatsError::ZeroVariance));
    }
}
