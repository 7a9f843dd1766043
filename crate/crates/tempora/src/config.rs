//! The TOML run configuration. See `docs/config.md` for every key.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize};
use sha2::{Digest, Sha256};
use tempora_core::event::{PromptOptions, PromptTemplate, TemplateName};
use tempora_core::gateway::{
    BackendKind, ChatBackend, CharTokenizer, CompletionParams, LogprobBackend, ModelSpec, TableMock, UniformMock,
    WhitespaceTokenizer, DEFAULT_CONTEXT_TOKENS,
};
use tempora_core::metrics::{Aggregation, DenomMode};
use tempora_core::temporal::ReleaseFrame;

use crate::backends::{HttpChat, HttpLogprob, Throttled};
use crate::collect::SourceSpec;
use crate::error::{Error, Result};

/// Dates may be written as TOML date literals or as "YYYY-MM-DD" strings.
mod dates {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }

    fn convert<E: serde::de::Error>(raw: Raw) -> Result<NaiveDate, E> {
        let s = match raw {
            Raw::Text(s) => s,
            Raw::Toml(d) => d.to_string(),
        };
        NaiveDate::parse_from_str(s.get(..10).unwrap_or(&s), "%Y-%m-%d").map_err(|e| E::custom(format!("date {s:?}: {e}")))
    }

    pub fn optional<'de, D: Deserializer<'de>>(d: D) -> Result<Option<NaiveDate>, D::Error> {
        Option::<Raw>::deserialize(d)?.map(convert).transpose()
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreConfig {
    #[serde(default = "StoreConfig::default_root")]
    pub root: PathBuf,
}

impl StoreConfig {
    fn default_root() -> PathBuf {
        PathBuf::from("tempora-store")
    }
}

impl Default for StoreConfig {
    fn default() -> Self {
        Self { root: Self::default_root() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    /// Document JSON Lines file, or a snapshot id under the store.
    pub snapshot: Option<String>,
    pub questions: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// First bucket start; defaults to the first of the earliest document's month.
    #[serde(default, deserialize_with = "dates::optional")]
    pub origin: Option<NaiveDate>,
    #[serde(default = "GridConfig::default_interval")]
    pub interval_months: u32,
    #[serde(default, deserialize_with = "dates::optional")]
    pub end: Option<NaiveDate>,
}

impl GridConfig {
    fn default_interval() -> u32 {
        2
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            origin: None,
            interval_months: 2,
            end: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoringConfig {
    #[serde(default)]
    pub denom: DenomMode,
    #[serde(default)]
    pub aggregation: Aggregation,
    /// Documents drawn per bucket; all when absent.
    pub sample_per_bucket: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrameConfig {
    pub present_window_months: u32,
    pub past_bucket_months: u32,
    pub gap_enabled: bool,
    pub past_gap_months: u32,
    pub future_interval_months: u32,
}

impl Default for FrameConfig {
    fn default() -> Self {
        let f = ReleaseFrame::new(NaiveDate::MIN);
        Self {
            present_window_months: f.present_window_months,
            past_bucket_months: f.past_bucket_months,
            gap_enabled: f.gap_enabled,
            past_gap_months: f.past_gap_months,
            future_interval_months: f.future_interval_months,
        }
    }
}

impl FrameConfig {
    pub fn frame(&self, release_date: NaiveDate) -> ReleaseFrame {
        ReleaseFrame {
            release_date,
            present_window_months: self.present_window_months,
            past_bucket_months: self.past_bucket_months,
            gap_enabled: self.gap_enabled,
            past_gap_months: self.past_gap_months,
            future_interval_months: self.future_interval_months,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TbiWindow {
    /// Every bucket in the series.
    #[default]
    All,
    /// Buckets starting before the release date.
    PreRelease,
    /// Buckets starting on or after the release date.
    PostRelease,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub tbi_window: TbiWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionConfig {
    #[serde(default = "PredictionConfig::default_template")]
    pub template: TemplateName,
    #[serde(default = "yes")]
    pub include_description: bool,
    #[serde(default = "yes")]
    pub include_close_date: bool,
    #[serde(default = "PredictionConfig::default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub temperature: f64,
}

impl PredictionConfig {
    fn default_template() -> TemplateName {
        TemplateName::Base
    }

    fn default_max_tokens() -> u32 {
        CompletionParams::default().max_tokens
    }

    pub fn prompt_options(&self) -> PromptOptions {
        PromptOptions {
            include_description: self.include_description,
            include_close_date: self.include_close_date,
        }
    }

    pub fn params(&self) -> CompletionParams {
        CompletionParams {
            max_tokens: self.max_tokens,
            temperature: self.temperature,
        }
    }
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            template: Self::default_template(),
            include_description: true,
            include_close_date: true,
            max_tokens: Self::default_max_tokens(),
            temperature: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeConfig {
    /// Worker threads for collection, scoring and prediction.
    pub workers: usize,
    /// Concurrent requests allowed per model backend.
    pub in_flight: usize,
    pub timeout_secs: u64,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            workers: 4,
            in_flight: 4,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectConfig {
    #[serde(default, deserialize_with = "dates::optional")]
    pub since: Option<NaiveDate>,
    #[serde(default = "CollectConfig::default_limit")]
    pub limit: usize,
    /// Directory of recorded responses used when offline.
    pub fixtures: Option<PathBuf>,
}

impl CollectConfig {
    fn default_limit() -> usize {
        200
    }
}

impl Default for CollectConfig {
    fn default() -> Self {
        Self {
            since: None,
            limit: Self::default_limit(),
            fixtures: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockTokenizer {
    #[default]
    Char,
    Whitespace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default, deserialize_with = "dates::optional")]
    pub release_date: Option<NaiveDate>,
    pub size_params: Option<u64>,
    pub backend: BackendKind,
    pub endpoint: Option<String>,
    /// Chat endpoint when it differs from `endpoint`.
    pub chat_endpoint: Option<String>,
    pub auth_ref: Option<String>,
    #[serde(default = "ModelConfig::default_context")]
    pub max_context_tokens: usize,

    // Mock settings.
    pub vocab: Option<u32>,
    #[serde(default)]
    pub tokenizer: MockTokenizer,
    #[serde(default)]
    pub omit_first_token: bool,
    pub default_prob: Option<f64>,
    #[serde(default)]
    pub token_probs: BTreeMap<String, f64>,
    pub default_response: Option<String>,
}

impl ModelConfig {
    fn default_context() -> usize {
        DEFAULT_CONTEXT_TOKENS
    }

    pub fn spec(&self) -> ModelSpec {
        ModelSpec {
            name: self.name.clone(),
            release_date: self.release_date,
            size_params: self.size_params,
            backend_kind: self.backend,
            endpoint: self.endpoint.clone(),
            auth_ref: self.auth_ref.clone(),
            max_context_tokens: self.max_context_tokens,
        }
    }

    fn table_mock(&self) -> TableMock {
        let mut m = TableMock::default();
        if let Some(p) = self.default_prob {
            m = m.with_default_prob(p);
        }
        for (t, p) in &self.token_probs {
            m = m.with_token_prob(t.clone(), *p);
        }
        if let Some(r) = &self.default_response {
            m = m.with_default_response(r.clone());
        }
        match self.tokenizer {
            MockTokenizer::Char => m.with_tokenizer(CharTokenizer),
            MockTokenizer::Whitespace => m.with_tokenizer(WhitespaceTokenizer),
        }
    }

    /// Scoring backend, limited to `in_flight` concurrent calls.
    pub fn logprob_backend(&self, in_flight: usize, timeout: Duration) -> Result<Arc<dyn LogprobBackend>> {
        let inner: Arc<dyn LogprobBackend> = match self.backend {
            BackendKind::MockUniform => {
                let mut m = UniformMock::new(self.vocab.unwrap_or(256));
                m = match self.tokenizer {
                    MockTokenizer::Char => m.with_tokenizer(CharTokenizer),
                    MockTokenizer::Whitespace => m.with_tokenizer(WhitespaceTokenizer),
                };
                if self.omit_first_token {
                    m = m.omitting_first_token();
                }
                Arc::new(m)
            }
            BackendKind::MockTable => Arc::new(self.table_mock()),
            BackendKind::LogprobHttp => {
                let ep = self.endpoint.as_deref().ok_or_else(|| Error::Config(format!("model {} needs an endpoint", self.name)))?;
                Arc::new(HttpLogprob::new(ep, &self.name, self.auth_ref.as_deref(), timeout)?)
            }
            BackendKind::ChatHttp => {
                return Err(Error::Config(format!("model {} is chat-only and cannot score text", self.name)));
            }
        };
        Ok(Arc::new(Throttled::new(inner, in_flight)))
    }

    /// Completion backend, limited to `in_flight` concurrent calls.
    pub fn chat_backend(&self, in_flight: usize, timeout: Duration) -> Result<Arc<dyn ChatBackend>> {
        let inner: Arc<dyn ChatBackend> = match self.backend {
            BackendKind::MockUniform | BackendKind::MockTable => Arc::new(self.table_mock()),
            BackendKind::ChatHttp | BackendKind::LogprobHttp => {
                let ep = self
                    .chat_endpoint
                    .as_deref()
                    .or(if self.backend == BackendKind::ChatHttp { self.endpoint.as_deref() } else { None })
                    .ok_or_else(|| Error::Config(format!("model {} needs a chat endpoint", self.name)))?;
                Arc::new(HttpChat::new(ep, &self.name, self.auth_ref.as_deref(), timeout)?)
            }
        };
        Ok(Arc::new(Throttled::new(inner, in_flight)))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default)]
    pub store: StoreConfig,
    #[serde(default)]
    pub inputs: Inputs,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub scoring: ScoringConfig,
    #[serde(default)]
    pub frame: FrameConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    /// Replacement bodies for built-in templates, keyed by template name.
    #[serde(default)]
    pub templates: BTreeMap<String, String>,
    #[serde(default)]
    pub runtime: RuntimeConfig,
    #[serde(default)]
    pub collect: CollectConfig,
    #[serde(default)]
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub sources: Vec<SourceSpec>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.store.root);
        if let Some(p) = cfg.inputs.questions.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.inputs.attributes.as_mut() {
            fix(p);
        }
        if let Some(p) = cfg.collect.fixtures.as_mut() {
            fix(p);
        }
        if let Some(s) = cfg.inputs.snapshot.as_mut() {
            let candidate = base.join(&*s);
            if Path::new(s).is_relative() && candidate.exists() {
                *s = candidate.display().to_string();
            }
        }
        for src in &mut cfg.sources {
            if src.kind == crate::collect::SourceKind::FileImport && Path::new(&src.endpoint).is_relative() {
                src.endpoint = base.join(&src.endpoint).display().to_string();
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.interval_months == 0 {
            return Err(Error::Config("grid.interval_months must be at least 1".into()));
        }
        let f = &self.frame;
        if f.past_bucket_months == 0 || f.future_interval_months == 0 {
            return Err(Error::Config("frame bucket widths must be at least 1 month".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("model {} listed twice", m.name)));
            }
            if m.max_context_tokens < 2 {
                return Err(Error::Config(format!("model {}: max_context_tokens must be at least 2", m.name)));
            }
        }
        for (name, body) in &self.templates {
            let t = TemplateName::parse(name)?;
            PromptTemplate::custom(t, body.clone())?;
        }
        for s in &self.sources {
            s.validate()?;
        }
        Ok(())
    }

    pub fn template(&self, name: TemplateName) -> PromptTemplate {
        match self.templates.get(name.as_str()) {
            Some(body) => PromptTemplate::custom(name, body.clone()).expect("validated"),
            None => PromptTemplate::builtin(name),
        }
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.runtime.timeout_secs)
    }

    /// SHA-256 of the canonical JSON form of everything that affects
    /// results. Locations (store root, input paths, fixture directory) are
    /// left out; inputs enter the run identity by content instead.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.store = StoreConfig::default();
        c.inputs = Inputs::default();
        c.collect.fixtures = None;
        sha256_hex(canonical_json(&c).as_bytes())
    }
}

/// Compact JSON with object keys in byte order.
pub fn canonical_json<T: Serialize>(value: &T) -> String {
    // serde_json's default map is ordered by key, so round-tripping
    // through `Value` sorts every object.
    let v = serde_json::to_value(value).expect("serializable");
    serde_json::to_string(&v).expect("serializable")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[grid]
origin = 2022-01-01
interval_months = 1

[[models]]
name = "uniform"
release_date = "2023-01-01"
backend = "mock_uniform"
vocab = 256

[[models]]
name = "table"
release_date = 2023-06-01
backend = "mock_table"
default_response = "Answer: A"
"#;

    #[test]
    fn parse_sample() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.grid.origin, NaiveDate::from_ymd_opt(2022, 1, 1));
        assert_eq!(c.models.len(), 2);
        assert_eq!(c.models[0].release_date, NaiveDate::from_ymd_opt(2023, 1, 1));
        assert_eq!(c.models[1].release_date, NaiveDate::from_ymd_opt(2023, 6, 1));
        assert_eq!(c.frame.present_window_months, 20);
        assert_eq!(c.prediction.template, TemplateName::Base);
        assert_eq!(c.scoring.denom, DenomMode::Utf8Bytes);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(Config::parse("[grid]\norigin_date = \"2022-01-01\"\n").is_err());
    }

    #[test]
    fn digest_tracks_settings_not_locations() {
        let a = Config::parse(SAMPLE).unwrap();
        let mut b = a.clone();
        b.store.root = PathBuf::from("/elsewhere");
        b.inputs.questions = Some(PathBuf::from("/q.jsonl"));
        assert_eq!(a.digest(), b.digest());
        b.grid.interval_months = 2;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn duplicate_models_rejected() {
        let text = format!("{SAMPLE}\n[[models]]\nname = \"table\"\nbackend = \"mock_table\"\n");
        assert!(Config::parse(&text).is_err());
    }

    #[test]
    fn custom_template_must_keep_placeholders() {
        assert!(Config::parse("[templates]\nbase = \"{title}\"\n").is_err());
        assert!(Config::parse("[templates]\nv9 = \"{title} {description} {options} {close_date}\"\n").is_err());
        let ok = Config::parse("[templates]\nbase = \"{title} {description} {options} {close_date}\"\n").unwrap();
        assert!(ok.template(TemplateName::Base).body.starts_with("{title}"));
    }

    #[test]
    fn canonical_json_sorts_keys() {
        #[derive(Serialize)]
        struct S {
            b: u8,
            a: u8,
        }
        assert_eq!(canonical_json(&S { b: 1, a: 2 }), r#"{"a":2,"b":1}"#);
    }

    #[test]
    fn partial_tables_take_defaults() {
        let cfg = Config::parse("[frame]\npresent_window_months = 12\n[runtime]\nworkers = 2\n").unwrap();
        assert_eq!(cfg.frame.present_window_months, 12);
        assert_eq!(cfg.frame.future_interval_months, 2);
        assert_eq!(cfg.runtime.in_flight, 4);
        let doc = "[templates]\nbase = \"Question: {title}\\nDetails: {description}\\nCloses: {close_date}\\nOptions:\\n{options}\\nAnswer with one letter.\"\n";
        assert!(Config::parse(doc).is_ok());
    }
}
