//! Release-relative time: period labels, BPC series, trend fitting and the
//! base-BPC / post-release change protocol.
//!
//! TBI is the ordinary least-squares slope of BPC against bucket index, so a
//! positive TBI means compression gets worse over time.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::calendar::{add_months, epoch_days, months_ceil};
use crate::metrics::pct_change;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TemporalError {
    #[error("need at least 2 points to fit a trend, found {0}")]
    InsufficientPoints(usize),
    #[error("no bucket lies in the six months before release")]
    NoBaseData,
    #[error("series indices must be strictly increasing (at {0})")]
    UnorderedIndex(i64),
    #[error("base BPC is zero")]
    ZeroBase,
}

/// Months before release used for the base BPC.
pub const BASE_WINDOW_MONTHS: u32 = 6;
/// Post-release offsets, in months, at which BPC change is reported.
pub const CHANGE_OFFSETS: [u32; 4] = [3, 6, 9, 12];

/// How the timeline around one model's release is cut into periods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseFrame {
    pub release_date: NaiveDate,
    pub present_window_months: u32,
    pub past_bucket_months: u32,
    pub past_gap_months: u32,
    /// Exclude questions closing within `past_gap_months` of release.
    pub gap_enabled: bool,
    pub future_interval_months: u32,
}

impl ReleaseFrame {
    pub fn new(release_date: NaiveDate) -> Self {
        Self {
            release_date,
            present_window_months: 20,
            past_bucket_months: 20,
            past_gap_months: 3,
            gap_enabled: false,
            future_interval_months: 2,
        }
    }

    pub fn with_gap(mut self, months: u32) -> Self {
        self.past_gap_months = months;
        self.gap_enabled = true;
        self
    }

    pub fn is_valid(&self) -> bool {
        self.present_window_months >= 1
            && self.past_bucket_months >= 1
            && self.past_gap_months >= 1
            && self.future_interval_months >= 1
            && self.past_gap_months <= self.present_window_months
    }
}

/// Span of the past, oldest first. At the default frame: beyond 80 months,
/// 60-80, 40-60 and 20-40 months before release.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastSpan {
    Beyond,
    Distant,
    Middle,
    Near,
}

impl PastSpan {
    pub const TABLE: [PastSpan; 3] = [PastSpan::Near, PastSpan::Middle, PastSpan::Distant];

    fn from_offset(k: u32) -> Self {
        match k {
            0 => PastSpan::Near,
            1 => PastSpan::Middle,
            2 => PastSpan::Distant,
            _ => PastSpan::Beyond,
        }
    }

    /// `(lo, hi)` months before release, `lo` exclusive and `hi` inclusive;
    /// `hi` is `None` for the open-ended span.
    pub fn months(self, frame: &ReleaseFrame) -> (u32, Option<u32>) {
        let k = match self {
            PastSpan::Near => 0,
            PastSpan::Middle => 1,
            PastSpan::Distant => 2,
            PastSpan::Beyond => 3,
        };
        let lo = frame.present_window_months + k * frame.past_bucket_months;
        let hi = (k < 3).then_some(lo + frame.past_bucket_months);
        (lo, hi)
    }
}

/// Where a date falls relative to a model's release. Variants order
/// chronologically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodLabel {
    Past(PastSpan),
    Present,
    /// Only produced when the frame's gap is enabled.
    Gap,
    Future(u32),
}

impl PeriodLabel {
    pub fn is_pre_release(self) -> bool {
        matches!(self, PeriodLabel::Past(_) | PeriodLabel::Present)
    }
}

/// Label an event by its close date. Month distances are whole calendar
/// months with partial months rounded up.
pub fn classify_period(event_close: NaiveDate, frame: &ReleaseFrame) -> PeriodLabel {
    let release = frame.release_date;
    if event_close > release {
        let after = months_ceil(release, event_close);
        return PeriodLabel::Future((after - 1) / frame.future_interval_months);
    }
    let before = months_ceil(event_close, release);
    if frame.gap_enabled && before <= frame.past_gap_months {
        PeriodLabel::Gap
    } else if before <= frame.present_window_months {
        PeriodLabel::Present
    } else {
        let k = (before - frame.present_window_months - 1) / frame.past_bucket_months;
        PeriodLabel::Past(PastSpan::from_offset(k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub index: i64,
    pub bpc: f64,
    /// Length behind the value; weights the base-BPC mean.
    pub weight: f64,
}

/// BPC per grid bucket for one model on one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BpcSeries {
    pub model_name: String,
    pub dataset_id: String,
    pub origin: NaiveDate,
    pub interval_months: u32,
    pub points: Vec<SeriesPoint>,
}

impl BpcSeries {
    pub fn new(
        model_name: impl Into<String>,
        dataset_id: impl Into<String>,
        origin: NaiveDate,
        interval_months: u32,
        points: Vec<SeriesPoint>,
    ) -> Result<Self, TemporalError> {
        for w in points.windows(2) {
            if w[1].index <= w[0].index {
                return Err(TemporalError::UnorderedIndex(w[1].index));
            }
        }
        Ok(Self {
            model_name: model_name.into(),
            dataset_id: dataset_id.into(),
            origin,
            interval_months,
            points,
        })
    }

    /// Unit-weight points from `(index, bpc)` pairs.
    pub fn from_values(
        model_name: impl Into<String>,
        dataset_id: impl Into<String>,
        origin: NaiveDate,
        interval_months: u32,
        values: &[(i64, f64)],
    ) -> Result<Self, TemporalError> {
        let points = values
            .iter()
            .map(|&(index, bpc)| SeriesPoint { index, bpc, weight: 1.0 })
            .collect();
        Self::new(model_name, dataset_id, origin, interval_months, points)
    }

    pub fn bucket_start(&self, index: i64) -> NaiveDate {
        add_months(self.origin, index * self.interval_months as i64)
    }

    pub fn bucket_end(&self, index: i64) -> NaiveDate {
        self.bucket_start(index + 1)
    }

    /// Twice the bucket midpoint in days since the epoch (exact half-days).
    fn midpoint_x2(&self, index: i64) -> i64 {
        epoch_days(self.bucket_start(index)) + epoch_days(self.bucket_end(index))
    }

    fn length_days(&self, index: i64) -> i64 {
        epoch_days(self.bucket_end(index)) - epoch_days(self.bucket_start(index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TbiFit {
    pub tbi: f64,
    pub intercept: f64,
    pub n_points: usize,
    pub fit_window: (NaiveDate, NaiveDate),
}

/// Least-squares line through `(index, bpc)`, restricted to buckets starting
/// inside `window` when given.
pub fn fit_tbi(series: &BpcSeries, window: Option<(NaiveDate, NaiveDate)>) -> Result<TbiFit, TemporalError> {
    let pts: Vec<&SeriesPoint> = series
        .points
        .iter()
        .filter(|p| match window {
            Some((from, to)) => {
                let start = series.bucket_start(p.index);
                from <= start && start < to
            }
            None => true,
        })
        .collect();
    if pts.len() < 2 {
        return Err(TemporalError::InsufficientPoints(pts.len()));
    }
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.index as f64).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.bpc).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for p in &pts {
        let dx = p.index as f64 - mean_x;
        sxy += dx * (p.bpc - mean_y);
        sxx += dx * dx;
    }
    let tbi = sxy / sxx;
    let first = pts[0].index;
    let last = pts[pts.len() - 1].index;
    Ok(TbiFit {
        tbi,
        intercept: mean_y - tbi * mean_x,
        n_points: pts.len(),
        fit_window: (series.bucket_start(first), series.bucket_end(last)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseChanges {
    pub base_bpc: f64,
    /// Percent change at each offset in [`CHANGE_OFFSETS`]; `None` when no
    /// bucket sits near that offset.
    pub changes: BTreeMap<u32, Option<f64>>,
}

/// Base BPC over the six months before release and its percent change at
/// 3, 6, 9 and 12 months after.
///
/// The base is the weighted mean over buckets whose midpoint lies in
/// `[release - 6 months, release)`. An offset uses the bucket whose midpoint
/// is nearest to `release + m months`, provided it is within half a bucket.
pub fn base_and_changes(series: &BpcSeries, frame: &ReleaseFrame) -> Result<BaseChanges, TemporalError> {
    let release = frame.release_date;
    let lo = 2 * epoch_days(add_months(release, -(BASE_WINDOW_MONTHS as i64)));
    let hi = 2 * epoch_days(release);

    let mut num = 0.0;
    let mut den = 0.0;
    for p in &series.points {
        let mid = series.midpoint_x2(p.index);
        if lo <= mid && mid < hi {
            num += p.bpc * p.weight;
            den += p.weight;
        }
    }
    if den <= 0.0 {
        return Err(TemporalError::NoBaseData);
    }
    let base_bpc = num / den;
    if base_bpc == 0.0 {
        return Err(TemporalError::ZeroBase);
    }

    let mut changes = BTreeMap::new();
    for m in CHANGE_OFFSETS {
        let target = 2 * epoch_days(add_months(release, m as i64));
        let nearest = series
            .points
            .iter()
            .map(|p| ((series.midpoint_x2(p.index) - target).abs(), p))
            .filter(|(dist, p)| *dist <= series.length_days(p.index))
            .min_by_key(|(dist, p)| (*dist, p.index));
        let change = nearest.map(|(_, p)| pct_change(base_bpc, p.bpc).expect("base is nonzero"));
        changes.insert(m, change);
    }
    Ok(BaseChanges { base_bpc, changes })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub model_name: String,
    pub dataset_id: String,
    pub release_date: NaiveDate,
    pub tbi: Option<f64>,
    pub intercept: Option<f64>,
    pub n_points: usize,
    pub fit_window: Option<(NaiveDate, NaiveDate)>,
    pub base_bpc: Option<f64>,
    pub changes: BTreeMap<u32, Option<f64>>,
}

/// TBI over `window` (full series by default) plus base and changes.
/// Parts that lack data are left empty rather than failing the report.
pub fn trend_report(series: &BpcSeries, frame: &ReleaseFrame, window: Option<(NaiveDate, NaiveDate)>) -> TrendReport {
    let fit = fit_tbi(series, window).ok();
    let base = base_and_changes(series, frame).ok();
    TrendReport {
        model_name: series.model_name.clone(),
        dataset_id: series.dataset_id.clone(),
        release_date: frame.release_date,
        tbi: fit.map(|f| f.tbi),
        intercept: fit.map(|f| f.intercept),
        n_points: fit.map(|f| f.n_points).unwrap_or(0),
        fit_window: fit.map(|f| f.fit_window),
        base_bpc: base.as_ref().map(|b| b.base_bpc),
        changes: base
            .map(|b| b.changes)
            .unwrap_or_else(|| CHANGE_OFFSETS.iter().map(|&m| (m, None)).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn frame(release: &str) -> ReleaseFrame {
        ReleaseFrame::new(d(release))
    }

    #[test]
    fn period_examples() {
        let f = frame("2024-01-01");
        assert_eq!(classify_period(d("2021-01-01"), &f), PeriodLabel::Past(PastSpan::Near));
        assert_eq!(classify_period(d("2023-06-15"), &f), PeriodLabel::Present);
        assert_eq!(classify_period(d("2024-05-10"), &f), PeriodLabel::Future(2));
    }

    #[test]
    fn past_span_boundaries() {
        let f = frame("2024-01-01");
        // exactly 20 months before is still present
        assert_eq!(classify_period(d("2022-05-01"), &f), PeriodLabel::Present);
        assert_eq!(classify_period(d("2022-04-30"), &f), PeriodLabel::Past(PastSpan::Near));
        assert_eq!(classify_period(d("2020-09-01"), &f), PeriodLabel::Past(PastSpan::Near));
        assert_eq!(classify_period(d("2020-08-31"), &f), PeriodLabel::Past(PastSpan::Middle));
        assert_eq!(classify_period(d("2019-01-01"), &f), PeriodLabel::Past(PastSpan::Middle));
        assert_eq!(classify_period(d("2017-06-01"), &f), PeriodLabel::Past(PastSpan::Distant));
        assert_eq!(classify_period(d("2017-04-30"), &f), PeriodLabel::Past(PastSpan::Beyond));
    }

    #[test]
    fn release_day_is_present_and_first_two_months_share_a_window() {
        let f = frame("2024-01-01");
        assert_eq!(classify_period(d("2024-01-01"), &f), PeriodLabel::Present);
        assert_eq!(classify_period(d("2024-01-02"), &f), PeriodLabel::Future(0));
        assert_eq!(classify_period(d("2024-03-01"), &f), PeriodLabel::Future(0));
        assert_eq!(classify_period(d("2024-03-02"), &f), PeriodLabel::Future(1));
    }

    #[test]
    fn gap_only_when_enabled() {
        let f = frame("2024-01-01");
        assert_eq!(classify_period(d("2023-11-15"), &f), PeriodLabel::Present);
        let g = f.with_gap(3);
        assert_eq!(classify_period(d("2023-11-15"), &g), PeriodLabel::Gap);
        assert_eq!(classify_period(d("2023-09-15"), &g), PeriodLabel::Present);
    }

    #[test]
    fn span_months_at_defaults() {
        let f = frame("2024-01-01");
        assert_eq!(PastSpan::Near.months(&f), (20, Some(40)));
        assert_eq!(PastSpan::Distant.months(&f), (60, Some(80)));
        assert_eq!(PastSpan::Beyond.months(&f), (80, None));
    }

    fn series(values: &[(i64, f64)]) -> BpcSeries {
        BpcSeries::from_values("m", "ds", d("2023-01-01"), 2, values).unwrap()
    }

    #[test]
    fn constant_series_has_zero_slope() {
        let fit = fit_tbi(&series(&[(0, 0.4), (1, 0.4), (2, 0.4), (3, 0.4)]), None).unwrap();
        assert_eq!(fit.tbi, 0.0);
        assert_eq!(fit.intercept, 0.4);
    }

    #[test]
    fn exact_line() {
        let fit = fit_tbi(&series(&[(1, 0.5), (2, 0.6), (3, 0.7)]), None).unwrap();
        assert!((fit.tbi - 0.1).abs() < 1e-15);
        assert!((fit.intercept - 0.4).abs() < 1e-15);
    }

    #[test]
    fn fit_needs_two_points() {
        assert_eq!(fit_tbi(&series(&[(0, 1.0)]), None), Err(TemporalError::InsufficientPoints(1)));
    }

    #[test]
    fn window_restricts_points() {
        let s = series(&[(0, 1.0), (1, 1.0), (2, 1.0), (3, 2.0), (4, 3.0)]);
        let fit = fit_tbi(&s, Some((d("2023-05-01"), d("2024-01-01")))).unwrap();
        assert_eq!(fit.n_points, 3);
        assert!((fit.tbi - 1.0).abs() < 1e-15);
        assert_eq!(fit.fit_window, (d("2023-05-01"), d("2023-11-01")));
    }

    #[test]
    fn unordered_series_rejected() {
        let r = BpcSeries::from_values("m", "ds", d("2023-01-01"), 2, &[(1, 0.1), (1, 0.2)]);
        assert_eq!(r, Err(TemporalError::UnorderedIndex(1)));
    }

    #[test]
    fn flat_series_has_zero_changes() {
        let values: Vec<(i64, f64)> = (0..12).map(|i| (i, 0.5)).collect();
        let s = series(&values);
        let bc = base_and_changes(&s, &frame("2024-01-01")).unwrap();
        assert_eq!(bc.base_bpc, 0.5);
        for m in CHANGE_OFFSETS {
            assert_eq!(bc.changes[&m], Some(0.0), "offset {m}");
        }
    }

    #[test]
    fn late_release_only_has_three_month_change() {
        let s = series(&[(0, 0.5), (1, 0.5), (2, 0.5), (3, 0.5), (4, 0.5), (5, 0.55)]);
        let bc = base_and_changes(&s, &frame("2023-09-01")).unwrap();
        assert!((bc.changes[&3].unwrap() - 10.0).abs() < 1e-9);
        assert_eq!(bc.changes[&6], None);
        assert_eq!(bc.changes[&9], None);
        assert_eq!(bc.changes[&12], None);
    }

    #[test]
    fn no_base_data() {
        let s = series(&[(0, 0.5), (1, 0.5)]);
        assert_eq!(base_and_changes(&s, &frame("2026-01-01")), Err(TemporalError::NoBaseData));
    }

    #[test]
    fn weighted_base() {
        let mut s = series(&[(0, 1.0), (1, 2.0), (2, 3.0)]);
        s.points[0].weight = 3.0;
        // release 2023-07-01: base window [2023-01-01, 2023-07-01) holds buckets 0..=2
        let bc = base_and_changes(&s, &frame("2023-07-01")).unwrap();
        assert!((bc.base_bpc - (3.0 + 2.0 + 3.0) / 5.0).abs() < 1e-15);
    }

    #[test]
    fn report_without_post_release_data() {
        let s = series(&[(0, 0.5), (1, 0.6)]);
        let r = trend_report(&s, &frame("2023-05-01"), None);
        assert!(r.tbi.is_some());
        assert_eq!(r.base_bpc, Some(0.55));
        assert!(r.changes.values().all(|c| c.is_none()));
        assert_eq!(r.changes.len(), 4);
    }

    #[test]
    fn monthly_grid_reaches_all_offsets() {
        let values: Vec<(i64, f64)> = (0..24).map(|i| (i, 1.0 + i as f64 * 0.01)).collect();
        let s = BpcSeries::from_values("m", "ds", d("2022-01-01"), 1, &values).unwrap();
        let bc = base_and_changes(&s, &frame("2023-01-01")).unwrap();
        assert!(bc.changes.values().all(|c| c.is_some()));
    }
}
