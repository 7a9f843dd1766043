//! Command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use tempora_core::corpus::Document;
use tempora_core::event::{Prediction, Question, TemplateName};
use tempora_core::gateway::{BackendKind, ChatBackend, LogprobBackend};
use tempora_core::metrics::DenomMode;
use tempora_core::temporal::{ReleaseFrame, TrendReport};

use crate::collect::{fetch_all, to_documents, FixtureTransport, HttpTransport, Transport};
use crate::config::{sha256_hex, Config};
use crate::correlate::{correlate_attributes, correlation_table};
use crate::error::{Error, Result};
use crate::io::{documents_jsonl, load_attributes, load_documents, parse_questions};
use crate::pipeline::{self, EventAnalysis, PredictModel, ScoreModel, ScoreSettings, SeriesFile};
use crate::report::{self, Table};
use crate::store::{snapshot_id, InputRefs, RunDir, RunManifest, Store, WriteOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenomArg {
    Bytes,
    Chars,
}

#[derive(Debug, Parser)]
#[command(name = "tempora", version, about = "Measure how language models hold up on text and events after their release")]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true, default_value = "tempora.toml")]
    pub config: PathBuf,
    /// Use this run instead of the one derived from the configuration.
    #[arg(long, global = true)]
    pub run_id: Option<String>,
    /// Use recorded fixtures instead of the network (also TEMPORA_OFFLINE=1).
    #[arg(long, global = true)]
    pub offline: bool,
    /// Prompt template for prediction.
    #[arg(long, global = true)]
    pub template: Option<String>,
    /// Length used to normalize BPC.
    #[arg(long, global = true, value_enum)]
    pub denom: Option<DenomArg>,
    /// Width in months of time buckets and future windows.
    #[arg(long, global = true, value_parser = clap::value_parser!(u32).range(1..))]
    pub interval_months: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fetch every configured source into a document snapshot.
    Collect,
    /// Score the snapshot with every model and build BPC series.
    Score,
    /// Ask every model the questions with the chosen template.
    Predict,
    /// Fit trends and run the hypothesis tests on stored results.
    Analyze,
    /// Render report tables from the analysis.
    Report,
    /// Correlate TBI with model attributes.
    Correlate {
        /// Attribute CSV; defaults to inputs.attributes.
        #[arg(long)]
        attributes: Option<PathBuf>,
    },
}

impl Cli {
    pub fn offline(&self) -> bool {
        self.offline || std::env::var("TEMPORA_OFFLINE").is_ok_and(|v| v == "1")
    }

    /// The configuration with command-line overrides applied.
    pub fn load_config(&self) -> Result<Config> {
        let mut cfg = Config::load(&self.config).map_err(|e| match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                Error::Usage(format!("config file {} not found", path.display()))
            }
            other => other,
        })?;
        if let Some(t) = &self.template {
            cfg.prediction.template = TemplateName::parse(t).map_err(|e| Error::Usage(e.to_string()))?;
        }
        if let Some(d) = self.denom {
            cfg.scoring.denom = match d {
                DenomArg::Bytes => DenomMode::Utf8Bytes,
                DenomArg::Chars => DenomMode::UnicodeChars,
            };
        }
        if let Some(n) = self.interval_months {
            cfg.grid.interval_months = n;
            cfg.frame.future_interval_months = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parse arguments, run, and return the process exit status.
pub fn main_with<I, T>(args: I, out: &mut dyn std::io::Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let cfg = cli.load_config()?;
    let ctx = Context { cli, cfg: &cfg, store: Store::new(&cfg.store.root) };
    match &cli.command {
        Command::Collect => ctx.collect(out),
        Command::Score => ctx.score(out),
        Command::Predict => ctx.predict(out),
        Command::Analyze => ctx.analyze(out),
        Command::Report => ctx.report(out),
        Command::Correlate { attributes } => ctx.correlate(attributes.as_deref(), out),
    }
}

struct Context<'a> {
    cli: &'a Cli,
    cfg: &'a Config,
    store: Store,
}

fn say(out: &mut dyn std::io::Write, line: String) {
    let _ = writeln!(out, "{line}");
}

fn report_write(out: &mut dyn std::io::Write, run: &RunDir, name: &str, bytes: &[u8]) -> Result<()> {
    let outcome = run.write(name, bytes)?;
    let note = match outcome {
        WriteOutcome::Created => "wrote",
        WriteOutcome::Unchanged => "unchanged",
    };
    say(out, format!("{note} {}", run.path.join(name).display()));
    Ok(())
}

fn parse_json<T: serde::de::DeserializeOwned>(run: &RunDir, name: &str) -> Result<T> {
    serde_json::from_str(&run.read(name)?).map_err(|e| Error::Schema {
        path: run.path.join(name),
        line: e.line(),
        detail: e.to_string(),
    })
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(run: &RunDir, name: &str) -> Result<Vec<T>> {
    let text = run.read(name)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                path: run.path.join(name),
                line: i + 1,
                detail: e.to_string(),
            })
        })
        .collect()
}

impl Context<'_> {
    fn transport(&self) -> Result<Box<dyn Transport>> {
        if self.cli.offline() {
            let dir = self
                .cfg
                .collect
                .fixtures
                .as_ref()
                .ok_or_else(|| Error::Config("offline collection needs collect.fixtures".into()))?;
            Ok(Box::new(FixtureTransport::from_dir(dir)?))
        } else {
            Ok(Box::new(HttpTransport::new(self.cfg.timeout())))
        }
    }

    fn collect(&self, out: &mut dyn std::io::Write) -> Result<()> {
        if self.cfg.sources.is_empty() {
            return Err(Error::Config("no sources configured".into()));
        }
        let transport = self.transport()?;
        let c = &self.cfg.collect;
        let outcomes = fetch_all(&self.cfg.sources, transport.as_ref(), self.cfg.runtime.workers, c.since, c.limit);

        let mut docs: BTreeMap<String, Document> = BTreeMap::new();
        let mut summary = serde_json::Map::new();
        let mut errors = Vec::new();
        for (source, outcome) in self.cfg.sources.iter().zip(&outcomes) {
            let conv = to_documents(&outcome.records, source);
            let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
            for (_, why) in &conv.rejected {
                *rejected.entry(format!("{why:?}")).or_default() += 1;
            }
            summary.insert(
                source.source_id.clone(),
                serde_json::json!({
                    "records": outcome.records.len(),
                    "documents": conv.documents.len(),
                    "rejected": rejected,
                    "duplicates": conv.duplicates,
                    "errors": outcome.errors.iter().map(|e| e.to_string()).collect::<Vec<_>>(),
                }),
            );
            say(
                out,
                format!(
                    "{}: {} records, {} documents, {} rejected, {} errors",
                    source.source_id,
                    outcome.records.len(),
                    conv.documents.len(),
                    conv.rejected.len(),
                    outcome.errors.len()
                ),
            );
            for d in conv.documents {
                docs.entry(d.doc_id.clone()).or_insert(d);
            }
            errors.extend(outcome.errors.iter().cloned());
        }
        let mut docs: Vec<Document> = docs.into_values().collect();
        docs.sort_by(|a, b| (&a.source_id, a.observed_at, &a.doc_id).cmp(&(&b.source_id, b.observed_at, &b.doc_id)));
        let id = self.store.save_snapshot(&documents_jsonl(&docs), &pipeline::pretty(&summary))?;
        say(out, format!("snapshot {id}: {} documents", docs.len()));
        for e in &errors {
            log::error!("{e}");
        }
        // The snapshot keeps whatever was fetched; the exit status still
        // reports the most serious failure.
        match errors.iter().find(|e| e.is_transport()).or(errors.first()) {
            Some(e) => Err(Error::Collect(e.clone())),
            None => Ok(()),
        }
    }

    fn documents(&self) -> Result<Option<(String, Vec<Document>)>> {
        let Some(s) = &self.cfg.inputs.snapshot else { return Ok(None) };
        let path = Path::new(s);
        let file = if path.is_file() {
            path.to_path_buf()
        } else {
            self.store.snapshot_dir(s).join("documents.jsonl")
        };
        if !file.exists() {
            return Err(Error::MissingArtifact(format!("snapshot {s}")));
        }
        let docs = load_documents(&file)?;
        Ok(Some((snapshot_id(documents_jsonl(&docs).as_bytes()), docs)))
    }

    fn questions(&self) -> Result<Option<(String, Vec<Question>)>> {
        let Some(path) = &self.cfg.inputs.questions else { return Ok(None) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let qs = parse_questions(&text, path)?;
        Ok(Some((sha256_hex(text.as_bytes()), qs)))
    }

    fn manifest(&self, snapshot: Option<String>, questions_digest: Option<String>) -> RunManifest {
        let refs = InputRefs {
            snapshot,
            questions_digest,
            models: self.cfg.models.iter().map(|m| m.name.clone()).collect(),
        };
        RunManifest::new(self.cfg.digest(), refs, self.command_name())
    }

    fn command_name(&self) -> &'static str {
        match self.cli.command {
            Command::Collect => "collect",
            Command::Score => "score",
            Command::Predict => "predict",
            Command::Analyze => "analyze",
            Command::Report => "report",
            Command::Correlate { .. } => "correlate",
        }
    }

    /// Create or reopen the run for the configured inputs.
    fn create_run(&self, snapshot: Option<String>, questions: Option<String>) -> Result<RunDir> {
        let m = self.manifest(snapshot, questions);
        if let Some(id) = &self.cli.run_id {
            if *id != m.run_id {
                return Err(Error::Usage(format!(
                    "--run-id {id} does not match this configuration and its inputs (run {})",
                    m.run_id
                )));
            }
        }
        self.store.run(&m)
    }

    /// The run named by --run-id, or the one the configuration maps to.
    fn existing_run(&self) -> Result<RunDir> {
        if let Some(id) = &self.cli.run_id {
            return self.store.open_run(id);
        }
        let snapshot = self.documents()?.map(|(id, _)| id);
        let questions = self.questions()?.map(|(d, _)| d);
        self.store.open_run(&self.manifest(snapshot, questions).run_id)
    }

    fn reject_http_offline(&self, kind: BackendKind, name: &str) -> Result<()> {
        if self.cli.offline() && matches!(kind, BackendKind::LogprobHttp | BackendKind::ChatHttp) {
            return Err(Error::Config(format!("model {name} needs the network, which is disabled offline")));
        }
        Ok(())
    }

    fn score(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let (snap, docs) = self
            .documents()?
            .ok_or_else(|| Error::Config("scoring needs inputs.snapshot".into()))?;
        let questions = self.questions()?.map(|(d, _)| d);
        let models: Vec<_> = self.cfg.models.iter().filter(|m| m.backend != BackendKind::ChatHttp).collect();
        if models.is_empty() {
            return Err(Error::Config("no model can score text".into()));
        }
        let mut backends: Vec<Arc<dyn LogprobBackend>> = Vec::new();
        for m in &models {
            self.reject_http_offline(m.backend, &m.name)?;
            backends.push(m.logprob_backend(self.cfg.runtime.in_flight, self.cfg.timeout())?);
        }
        let grid = pipeline::grid_for(&docs, self.cfg.grid.origin, self.cfg.grid.interval_months, self.cfg.grid.end)
            .ok_or_else(|| Error::MissingArtifact("documents in the snapshot".into()))?;
        let settings = ScoreSettings {
            grid,
            denom: self.cfg.scoring.denom,
            aggregation: self.cfg.scoring.aggregation,
            sample_per_bucket: self.cfg.scoring.sample_per_bucket,
            seed: self.cfg.scoring.seed,
            workers: self.cfg.runtime.workers,
        };
        let score_models: Vec<ScoreModel> = models
            .iter()
            .zip(&backends)
            .map(|(m, b)| ScoreModel {
                name: &m.name,
                max_context_tokens: m.max_context_tokens,
                backend: b.as_ref(),
            })
            .collect();
        let (records, series) = pipeline::score(&docs, &score_models, &settings)?;
        let run = self.create_run(Some(snap), questions)?;
        say(out, format!("run {}", run.run_id));
        report_write(out, &run, "scores.jsonl", pipeline::jsonl(&records).as_bytes())?;
        report_write(out, &run, "series.json", pipeline::pretty(&series).as_bytes())?;
        Ok(())
    }

    fn predict(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let (qdigest, questions) = self
            .questions()?
            .ok_or_else(|| Error::Config("prediction needs inputs.questions".into()))?;
        let snapshot = self.documents()?.map(|(id, _)| id);
        let mut backends: Vec<Arc<dyn ChatBackend>> = Vec::new();
        for m in &self.cfg.models {
            self.reject_http_offline(m.backend, &m.name)?;
            backends.push(m.chat_backend(self.cfg.runtime.in_flight, self.cfg.timeout())?);
        }
        let models: Vec<PredictModel> = self
            .cfg
            .models
            .iter()
            .zip(&backends)
            .map(|(m, b)| PredictModel { name: &m.name, backend: b.as_ref() })
            .collect();
        let p = &self.cfg.prediction;
        let template = self.cfg.template(p.template);
        let preds = pipeline::predict(&questions, &models, &template, p.prompt_options(), &p.params(), self.cfg.runtime.workers)?;
        let run = self.create_run(snapshot, Some(qdigest))?;
        say(out, format!("run {}", run.run_id));
        report_write(out, &run, "predictions.jsonl", pipeline::jsonl(&preds).as_bytes())?;
        Ok(())
    }

    fn frames(&self) -> Result<BTreeMap<String, ReleaseFrame>> {
        let mut frames = BTreeMap::new();
        for m in &self.cfg.models {
            let release = m
                .release_date
                .ok_or_else(|| Error::Config(format!("model {} needs a release_date for analysis", m.name)))?;
            frames.insert(m.name.clone(), self.cfg.frame.frame(release));
        }
        Ok(frames)
    }

    fn analyze(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let run = self.existing_run()?;
        say(out, format!("run {}", run.run_id));
        let frames = self.frames()?;
        let has_series = run.exists("series.json");
        let has_preds = run.exists("predictions.jsonl");
        if !has_series && !has_preds {
            return Err(Error::MissingArtifact(format!("series.json or predictions.jsonl in run {}", run.run_id)));
        }
        if has_series {
            let file: SeriesFile = parse_json(&run, "series.json")?;
            let trends = pipeline::analyze_trends(&file.series, &frames, self.cfg.analysis.tbi_window)?;
            report_write(out, &run, "trends.json", pipeline::pretty(&trends).as_bytes())?;
        }
        if has_preds {
            let preds: Vec<Prediction> = parse_jsonl(&run, "predictions.jsonl")?;
            let (_, questions) = self
                .questions()?
                .ok_or_else(|| Error::Config("analysis of predictions needs inputs.questions".into()))?;
            let mut events = Vec::new();
            for m in &self.cfg.models {
                if !preds.iter().any(|p| p.model_name == m.name) {
                    continue;
                }
                let template = preds
                    .iter()
                    .find(|p| p.model_name == m.name)
                    .map(|p| p.template_name)
                    .unwrap_or(self.cfg.prediction.template);
                events.push(pipeline::analyze_events(&m.name, template, &preds, &questions, &frames[&m.name])?);
            }
            report_write(out, &run, "events.json", pipeline::pretty(&events).as_bytes())?;
        }
        Ok(())
    }

    fn report(&self, out: &mut dyn std::io::Write) -> Result<()> {
        let run = self.existing_run()?;
        say(out, format!("run {}", run.run_id));
        let mut tables: Vec<(&str, Table)> = Vec::new();
        let has_trends = run.exists("trends.json");
        let has_events = run.exists("events.json");
        if !has_trends && !has_events {
            return Err(Error::MissingArtifact(format!("trends.json or events.json in run {} (run analyze first)", run.run_id)));
        }
        if has_trends {
            let trends: Vec<TrendReport> = parse_json(&run, "trends.json")?;
            tables.push(("tbi", report::tbi_table(&trends)));
        }
        if has_events {
            let events: Vec<EventAnalysis> = parse_json(&run, "events.json")?;
            tables.extend(pipeline::event_tables(&events));
        }
        for (stem, t) in tables {
            report_write(out, &run, &format!("reports/{stem}.md"), t.to_markdown().as_bytes())?;
            report_write(out, &run, &format!("reports/{stem}.csv"), t.to_csv().as_bytes())?;
        }
        Ok(())
    }

    fn correlate(&self, attributes: Option<&Path>, out: &mut dyn std::io::Write) -> Result<()> {
        let path = attributes
            .map(Path::to_path_buf)
            .or_else(|| self.cfg.inputs.attributes.clone())
            .ok_or_else(|| Error::Usage("correlate needs --attributes or inputs.attributes".into()))?;
        let attrs = load_attributes(&path)?;
        let run = self.existing_run()?;
        let trends: Vec<TrendReport> = parse_json(&run, "trends.json")?;
        let mut datasets: BTreeMap<&str, Vec<(String, f64)>> = BTreeMap::new();
        for t in &trends {
            if let Some(tbi) = t.tbi {
                datasets.entry(t.dataset_id.as_str()).or_default().push((t.model_name.clone(), tbi));
            }
        }
        let mut per_dataset = Vec::new();
        for (dataset, tbi) in datasets {
            per_dataset.push((dataset.to_string(), correlate_attributes(&tbi, &attrs)?));
        }
        let table = correlation_table(&per_dataset);
        let md = table.to_markdown();
        let _ = out.write_all(md.as_bytes());
        report_write(out, &run, "reports/correlation.md", md.as_bytes())?;
        report_write(out, &run, "reports/correlation.csv", table.to_csv().as_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        let mut sink = Vec::new();
        assert_eq!(main_with(["tempora", "frobnicate"], &mut sink), 1);
        assert_eq!(main_with(["tempora", "score", "--denom", "words"], &mut sink), 1);
        assert_eq!(main_with(["tempora", "score", "--interval-months", "0"], &mut sink), 1);
        assert_eq!(main_with(["tempora", "--config", "/nonexistent/t.toml", "score"], &mut sink), 1);
    }

    #[test]
    fn overrides_apply() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("t.toml");
        std::fs::write(&path, "").unwrap();
        let cli = Cli::try_parse_from([
            "tempora",
            "--config",
            path.to_str().unwrap(),
            "--template",
            "v5_future_recall",
            "--denom",
            "chars",
            "--interval-months",
            "3",
            "predict",
        ])
        .unwrap();
        let cfg = cli.load_config().unwrap();
        assert_eq!(cfg.prediction.template, TemplateName::V5FutureRecall);
        assert_eq!(cfg.scoring.denom, DenomMode::UnicodeChars);
        assert_eq!(cfg.grid.interval_months, 3);
        let bad = Cli::try_parse_from(["tempora", "--config", path.to_str().unwrap(), "--template", "nope", "predict"]).unwrap();
        assert_eq!(bad.load_config().unwrap_err().exit_code(), 1);
    }
}
