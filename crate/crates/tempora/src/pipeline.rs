//! The stages behind each subcommand, as plain functions over loaded inputs.
//!
//! Scoring and prediction fan out over a bounded worker pool; results come
//! back in input order whatever order the workers finish in.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use tempora_core::corpus::{bucketize, sample, Document, PeriodGrid};
use tempora_core::event::{render_prompt, Prediction, PromptOptions, PromptTemplate, Question, TemplateName, window_accuracy};
use tempora_core::gateway::{score_text, ChatBackend, CompletionParams, GatewayError, LogprobBackend};
use tempora_core::metrics::{aggregate_bpc, bpc, classify_decline, AccSample, Aggregation, BpcValue, DeclineReport, DenomMode};
use tempora_core::stats::{bias_test, degeneration_test, ResultLabel, Significance, TestKind, TestResult};
use tempora_core::temporal::{trend_report, BpcSeries, PastSpan, PeriodLabel, ReleaseFrame, SeriesPoint, TrendReport};

use crate::config::{sha256_hex, TbiWindow};
use crate::error::{Error, Result};
use crate::report::{self, AccuracyRow, BiasRow, DeclineRow, Table};

/// Map `f` over `items` on up to `workers` threads, keeping input order.
pub fn par_map<T: Sync, R: Send>(items: &[T], workers: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let workers = workers.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                slots.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

// ---------------------------------------------------------------- scoring

/// Grid origin: configured, or the first of the earliest document's month.
pub fn grid_for(docs: &[Document], origin: Option<NaiveDate>, interval_months: u32, end: Option<NaiveDate>) -> Option<PeriodGrid> {
    let origin = origin.or_else(|| {
        docs.iter()
            .map(|d| d.observed_at)
            .min()
            .map(|d| d.with_day(1).expect("day 1 exists"))
    })?;
    let grid = PeriodGrid::new(origin, interval_months);
    Some(match end {
        Some(e) => grid.until(e),
        None => grid,
    })
}

/// One document scored by one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub model_name: String,
    pub dataset_id: String,
    pub doc_id: String,
    pub bucket: i64,
    pub bucket_start: NaiveDate,
    pub tokens: usize,
    #[serde(flatten)]
    pub value: BpcValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesFile {
    pub denom_mode: DenomMode,
    pub aggregation: Aggregation,
    pub series: Vec<BpcSeries>,
}

pub struct ScoreModel<'a> {
    pub name: &'a str,
    pub max_context_tokens: usize,
    pub backend: &'a dyn LogprobBackend,
}

pub struct ScoreSettings {
    pub grid: PeriodGrid,
    pub denom: DenomMode,
    pub aggregation: Aggregation,
    pub sample_per_bucket: Option<usize>,
    pub seed: u64,
    pub workers: usize,
}

/// Per-bucket sampling seed, so buckets and datasets draw independently.
fn bucket_seed(seed: u64, dataset: &str, index: i64) -> u64 {
    let h = sha256_hex(format!("{seed}:{dataset}:{index}").as_bytes());
    u64::from_str_radix(&h[..16], 16).expect("hex digits")
}

/// Documents to score, grouped per dataset (source) and bucket. Documents
/// observed before the grid origin are left out.
pub fn select_documents(docs: &[Document], s: &ScoreSettings) -> Vec<(String, i64, Document)> {
    let mut by_source: BTreeMap<&str, Vec<Document>> = BTreeMap::new();
    for d in docs {
        by_source.entry(d.source_id.as_str()).or_default().push(d.clone());
    }
    let mut out = Vec::new();
    let mut before_origin = 0;
    for (source, group) in by_source {
        for (bucket, members) in bucketize(&group, &s.grid) {
            if bucket.pre_grid {
                before_origin += members.len();
                continue;
            }
            if let Some(end) = s.grid.end {
                if bucket.start >= end {
                    continue;
                }
            }
            let chosen = match s.sample_per_bucket {
                Some(k) if !members.is_empty() => sample(&members, k, bucket_seed(s.seed, source, bucket.index)),
                _ => {
                    let mut m = members;
                    m.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
                    m
                }
            };
            out.extend(chosen.into_iter().map(|d| (source.to_string(), bucket.index, d)));
        }
    }
    if before_origin > 0 {
        log::warn!("{before_origin} documents fall before the grid origin and are not scored");
    }
    out
}

/// Score every selected document with every model. Any backend failure
/// stops the stage: a partial series would silently bias the trend.
pub fn score(docs: &[Document], models: &[ScoreModel], s: &ScoreSettings) -> Result<(Vec<ScoreRecord>, SeriesFile)> {
    let selected = select_documents(docs, s);
    let work: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..selected.len()).map(move |d| (m, d)))
        .collect();
    log::info!("scoring {} documents with {} models", selected.len(), models.len());
    let results = par_map(&work, s.workers, |&(m, d)| {
        let model = &models[m];
        let (dataset, bucket, doc) = &selected[d];
        let scored = score_text(model.backend, model.name, model.max_context_tokens, doc)?;
        let value = bpc(&scored, s.denom)?;
        Ok::<_, Error>(ScoreRecord {
            model_name: model.name.to_string(),
            dataset_id: dataset.clone(),
            doc_id: doc.doc_id.clone(),
            bucket: *bucket,
            bucket_start: s.grid.bucket(*bucket).start,
            tokens: scored.token_count(),
            value,
        })
    });
    let records = results.into_iter().collect::<Result<Vec<_>>>()?;
    let series = build_series(&records, s.grid, s.aggregation)?;
    Ok((
        records,
        SeriesFile {
            denom_mode: s.denom,
            aggregation: s.aggregation,
            series,
        },
    ))
}

/// Aggregate document scores into one series per (model, dataset). A
/// point's weight is the total length behind it.
pub fn build_series(records: &[ScoreRecord], grid: PeriodGrid, style: Aggregation) -> Result<Vec<BpcSeries>> {
    let mut groups: BTreeMap<(&str, &str), BTreeMap<i64, Vec<BpcValue>>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model_name.as_str(), r.dataset_id.as_str()))
            .or_default()
            .entry(r.bucket)
            .or_default()
            .push(r.value);
    }
    let mut out = Vec::new();
    for ((model, dataset), buckets) in groups {
        let mut points = Vec::new();
        for (index, values) in buckets {
            points.push(SeriesPoint {
                index,
                bpc: aggregate_bpc(&values, style)?,
                weight: values.iter().map(|v| v.denom as f64).sum(),
            });
        }
        out.push(BpcSeries::new(model, dataset, grid.origin, grid.interval_months, points)?);
    }
    Ok(out)
}

pub fn jsonl<T: Serialize>(rows: &[T]) -> String {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("value serializes") + "\n"
}

// ------------------------------------------------------------- prediction

pub struct PredictModel<'a> {
    pub name: &'a str,
    pub backend: &'a dyn ChatBackend,
}

/// Ask every model every question. Backend failures are kept on the
/// prediction; the stage fails only when a model could not be reached at
/// all, since persisting a run of pure transport errors records nothing.
pub fn predict(
    questions: &[Question],
    models: &[PredictModel],
    template: &PromptTemplate,
    opts: PromptOptions,
    params: &CompletionParams,
    workers: usize,
) -> Result<Vec<Prediction>> {
    let mut out = Vec::new();
    for m in models {
        let results = par_map(questions, workers, |q| {
            let prompt = render_prompt(template, q, opts);
            match m.backend.complete(&prompt, params) {
                Ok(raw) => (Prediction::from_response(q, m.name, template.name, raw), None),
                Err(e) => (Prediction::from_error(q, m.name, template.name, e.to_string()), Some(e)),
            }
        });
        let failures: Vec<&GatewayError> = results.iter().filter_map(|(_, e)| e.as_ref()).collect();
        if !questions.is_empty() && failures.len() == questions.len() {
            if let Some(e) = failures.iter().find(|e| matches!(e, GatewayError::Transport { .. })) {
                return Err(Error::Gateway((*e).clone()));
            }
        }
        if !failures.is_empty() {
            log::warn!("{}: {} of {} questions failed", m.name, failures.len(), questions.len());
        }
        out.extend(results.into_iter().map(|(p, _)| p));
    }
    Ok(out)
}

// --------------------------------------------------------------- analysis

/// A [`TestResult`] that survives JSON: an infinite z (zero variance) is
/// stored as null and recovered from the p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub test: TestKind,
    pub acc_a: AccSample,
    pub acc_b: AccSample,
    pub z: Option<f64>,
    pub p: f64,
    pub significance: Significance,
    pub label: ResultLabel,
    pub small_sample: bool,
}

impl From<TestResult> for TestRecord {
    fn from(r: TestResult) -> Self {
        Self {
            test: r.test,
            acc_a: r.acc_a,
            acc_b: r.acc_b,
            z: r.z.is_finite().then_some(r.z),
            p: r.p,
            significance: r.significance,
            label: r.label,
            small_sample: r.small_sample,
        }
    }
}

impl From<TestRecord> for TestResult {
    fn from(r: TestRecord) -> Self {
        let z = r.z.unwrap_or(if r.p < 0.5 { f64::INFINITY } else { f64::NEG_INFINITY });
        Self {
            test: r.test,
            acc_a: r.acc_a,
            acc_b: r.acc_b,
            z,
            p: r.p,
            significance: r.significance,
            label: r.label,
            small_sample: r.small_sample,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub label: PeriodLabel,
    pub sample: AccSample,
    pub acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRecord {
    pub span: PastSpan,
    pub past: Option<AccSample>,
    pub result: Option<TestRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerationRecord {
    pub window: u32,
    pub result: TestRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeclineRecord {
    /// Future window used as the first post-release period.
    pub window: u32,
    pub n_pre: u64,
    pub n_post: u64,
    pub report: DeclineReport,
}

/// Everything derived from one model's predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventAnalysis {
    pub model_name: String,
    pub template: TemplateName,
    pub frame: ReleaseFrame,
    pub predictions: usize,
    pub errors: usize,
    pub unparsed: usize,
    pub windows: Vec<WindowRecord>,
    pub present: Option<AccSample>,
    pub pooled_pre: Option<AccSample>,
    pub bias: Vec<BiasRecord>,
    pub degeneration: Vec<DegenerationRecord>,
    pub decline: Option<DeclineRecord>,
}

/// Window accuracies, the bias tests against the present window, and the
/// degeneration tests of each future window against pooled pre-release
/// accuracy.
pub fn analyze_events(
    model_name: &str,
    template: TemplateName,
    preds: &[Prediction],
    questions: &[Question],
    frame: &ReleaseFrame,
) -> Result<EventAnalysis> {
    let mine: Vec<Prediction> = preds.iter().filter(|p| p.model_name == model_name).cloned().collect();
    let acc = window_accuracy(&mine, questions, frame)?;
    let present = acc.by_label.get(&PeriodLabel::Present).copied();

    let mut bias = Vec::new();
    for span in PastSpan::TABLE {
        let past = acc.by_label.get(&PeriodLabel::Past(span)).copied();
        let result = match (past, present) {
            (Some(past), Some(present)) => Some(bias_test(past, present)?.into()),
            _ => None,
        };
        bias.push(BiasRecord { span, past, result });
    }

    let mut degeneration = Vec::new();
    let mut decline = None;
    if let Some(pre) = acc.pooled_pre {
        for (label, sample) in &acc.by_label {
            if let PeriodLabel::Future(k) = label {
                degeneration.push(DegenerationRecord {
                    window: *k,
                    result: degeneration_test(pre, *sample)?.into(),
                });
                if decline.is_none() {
                    decline = Some(DeclineRecord {
                        window: *k,
                        n_pre: pre.n_total,
                        n_post: sample.n_total,
                        report: classify_decline(pre.acc(), sample.acc())?,
                    });
                }
            }
        }
    }

    Ok(EventAnalysis {
        model_name: model_name.to_string(),
        template,
        frame: *frame,
        predictions: mine.len(),
        errors: acc.errors,
        unparsed: acc.unparsed,
        windows: acc
            .by_label
            .iter()
            .map(|(label, s)| WindowRecord {
                label: *label,
                sample: *s,
                acc: s.acc(),
            })
            .collect(),
        present,
        pooled_pre: acc.pooled_pre,
        bias,
        degeneration,
        decline,
    })
}

/// Date range handed to the trend fit for a window choice.
pub fn tbi_range(window: TbiWindow, release: NaiveDate) -> Option<(NaiveDate, NaiveDate)> {
    match window {
        TbiWindow::All => None,
        TbiWindow::PreRelease => Some((NaiveDate::MIN, release)),
        TbiWindow::PostRelease => Some((release, NaiveDate::MAX)),
    }
}

/// Trend report for each series whose model has a frame.
pub fn analyze_trends(series: &[BpcSeries], frames: &BTreeMap<String, ReleaseFrame>, window: TbiWindow) -> Result<Vec<TrendReport>> {
    let mut out = Vec::new();
    for s in series {
        let frame = frames
            .get(&s.model_name)
            .ok_or_else(|| Error::Config(format!("model {} needs a release_date for analysis", s.model_name)))?;
        out.push(trend_report(s, frame, tbi_range(window, frame.release_date)));
    }
    Ok(out)
}

// ---------------------------------------------------------------- reports

/// Report tables by file stem, in a fixed order.
pub fn event_tables(events: &[EventAnalysis]) -> Vec<(&'static str, Table)> {
    let bias_rows: Vec<BiasRow> = events
        .iter()
        .map(|e| BiasRow {
            model: &e.model_name,
            present: e.present,
            results: std::array::from_fn(|i| e.bias.get(i).and_then(|b| b.result).map(TestResult::from)),
        })
        .collect();
    let interval = events.first().map(|e| e.frame.future_interval_months).unwrap_or(2);
    let accuracy_rows: Vec<AccuracyRow> = events
        .iter()
        .map(|e| AccuracyRow {
            model: &e.model_name,
            pooled_pre: e.pooled_pre,
            windows: e
                .windows
                .iter()
                .filter_map(|w| match w.label {
                    PeriodLabel::Future(k) => Some((
                        k,
                        w.sample,
                        e.degeneration.iter().find(|d| d.window == k).map(|d| d.result.into()),
                    )),
                    _ => None,
                })
                .collect(),
        })
        .collect();
    let decline_rows: Vec<DeclineRow> = events
        .iter()
        .filter_map(|e| {
            e.decline.as_ref().map(|d| DeclineRow {
                model: &e.model_name,
                report: d.report,
                n_pre: Some(d.n_pre),
                n_post: Some(d.n_post),
            })
        })
        .collect();
    vec![
        ("bias", report::bias_table(&bias_rows)),
        ("accuracy", report::accuracy_table(&accuracy_rows, interval)),
        ("decline", report::decline_table(&decline_rows)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempora_core::corpus::Category;
    use tempora_core::event::AnswerOption;
    use tempora_core::gateway::{TableMock, UniformMock};

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn doc(source: &str, date: &str, n: usize) -> Document {
        let body: String = "abcdefghij".repeat(n / 10 + 1)[..n].to_string();
        let body = format!("{body}{date}");
        Document {
            doc_id: tempora_core::corpus::doc_id(source, &body),
            source_id: source.into(),
            category: Category::Other,
            title: None,
            char_len: body.chars().count(),
            byte_len: body.len(),
            body,
            observed_at: d(date),
        }
    }

    #[test]
    fn par_map_keeps_order() {
        let xs: Vec<u64> = (0..200).collect();
        let ys = par_map(&xs, 8, |x| {
            std::thread::sleep(std::time::Duration::from_micros(200 - x));
            x * 2
        });
        assert_eq!(ys, xs.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert!(par_map(&[] as &[u8], 4, |x| *x).is_empty());
    }

    #[test]
    fn uniform_series_is_flat() {
        let docs = vec![
            doc("a", "2023-01-05", 120),
            doc("a", "2023-01-20", 150),
            doc("a", "2023-03-02", 130),
            doc("b", "2023-05-09", 110),
        ];
        let mock = UniformMock::new(256);
        let settings = ScoreSettings {
            grid: grid_for(&docs, None, 2, None).unwrap(),
            denom: DenomMode::Utf8Bytes,
            aggregation: Aggregation::Micro,
            sample_per_bucket: None,
            seed: 0,
            workers: 3,
        };
        let (records, file) = score(&docs, &[ScoreModel { name: "u", max_context_tokens: 64, backend: &mock }], &settings).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(file.series.len(), 2);
        let a = &file.series[0];
        assert_eq!(a.dataset_id, "a");
        assert_eq!(a.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![0, 1]);
        for p in &a.points {
            assert!((p.bpc - 8.0).abs() < 1e-12);
        }
        assert_eq!(a.points[0].weight, (130 + 160) as f64);
        // Sampling one per bucket is deterministic.
        let one = ScoreSettings {
            sample_per_bucket: Some(1),
            ..settings
        };
        let first = select_documents(&docs, &one);
        assert_eq!(first.len(), 3);
        assert_eq!(first, select_documents(&docs, &one));
    }

    fn q(id: &str, close: &str, right: char) -> Question {
        let opt = |label: char, text: &str| AnswerOption {
            label,
            text: text.into(),
            crowd_pct: None,
            correct: label == right,
        };
        Question {
            question_id: id.into(),
            title: format!("Question {id}?"),
            description: None,
            open_at: d("2019-01-01"),
            close_at: d(close),
            options: vec![opt('A', "Yes"), opt('B', "No")],
            tags: vec![],
        }
    }

    #[test]
    fn events_end_to_end() {
        // The mock always answers A: right before release, wrong after.
        let mut qs = Vec::new();
        for i in 0..30 {
            qs.push(q(&format!("pre{i}"), "2023-01-10", 'A'));
            qs.push(q(&format!("post{i}"), "2023-07-10", 'B'));
        }
        let mock = TableMock::default().with_default_response("Answer: A");
        let t = PromptTemplate::builtin(TemplateName::Base);
        let preds = predict(
            &qs,
            &[PredictModel { name: "m", backend: &mock }],
            &t,
            PromptOptions::default(),
            &CompletionParams::default(),
            4,
        )
        .unwrap();
        assert_eq!(preds.len(), 60);
        let frame = ReleaseFrame::new(d("2023-06-01"));
        let a = analyze_events("m", TemplateName::Base, &preds, &qs, &frame).unwrap();
        assert_eq!(a.pooled_pre.unwrap().acc(), 1.0);
        let dec = a.decline.clone().unwrap();
        assert_eq!(dec.window, 0);
        assert_eq!(dec.report.decline_pct, 100.0);
        let t3 = a.degeneration[0].result;
        assert_eq!(t3.z, None);
        assert_eq!(t3.p, 0.0);
        let json = serde_json::to_string(&a).unwrap();
        let back: EventAnalysis = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        assert_eq!(TestResult::from(t3).z, f64::INFINITY);
        let tables = event_tables(&[a]);
        assert_eq!(tables[1].1.rows[0][2].text, "0.00*** (n=30)");
    }

    #[test]
    fn unreachable_model_fails_the_stage() {
        struct Down;
        impl ChatBackend for Down {
            fn complete(&self, _: &str, _: &CompletionParams) -> std::result::Result<String, GatewayError> {
                Err(GatewayError::Transport {
                    endpoint: "http://x".into(),
                    detail: "refused".into(),
                })
            }
        }
        let qs = vec![q("a", "2023-01-01", 'A')];
        let t = PromptTemplate::builtin(TemplateName::Base);
        let err = predict(&qs, &[PredictModel { name: "m", backend: &Down }], &t, PromptOptions::default(), &CompletionParams::default(), 1)
            .unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
