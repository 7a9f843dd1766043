//! Source adapters producing dated raw records for the corpus.

mod limiter;
pub mod parse;
mod robots;
mod transport;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use tempora_core::corpus::{preprocess, Category, Document, DocumentMeta, Rejection};

pub use limiter::RateLimiter;
pub use robots::Robots;
pub use transport::{Fetched, FixtureTransport, HttpTransport, Transport, USER_AGENT};

use parse::{Item, LinkRule};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CollectError {
    #[error("{url}: transport failure{}: {detail}", status.map(|s| format!(" (HTTP {s})")).unwrap_or_default())]
    Transport { url: String, status: Option<u16>, detail: String },
    #[error("{url}: parse failure: {detail}")]
    Parse { url: String, detail: String },
    #[error("{url}: disallowed by robots.txt")]
    RobotsDisallowed { url: String },
    #[error("source {source_id}: {detail}")]
    InvalidSource { source_id: String, detail: String },
}

impl CollectError {
    pub fn is_transport(&self) -> bool {
        matches!(self, CollectError::Transport { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Rss,
    HttpList,
    ArxivApi,
    WikiRecent,
    FileImport,
}

fn default_rate() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub source_id: String,
    pub kind: SourceKind,
    /// Feed or API URL; a file path for `file_import`.
    pub endpoint: String,
    #[serde(default)]
    pub category: Category,
    #[serde(default = "default_rate")]
    pub max_requests_per_sec: f64,
    /// Link rule for `http_list`, e.g. `a.headline[href*=/news/]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction: Option<String>,
}

impl SourceSpec {
    pub fn validate(&self) -> Result<(), CollectError> {
        let invalid = |detail: String| {
            Err(CollectError::InvalidSource {
                source_id: self.source_id.clone(),
                detail,
            })
        };
        if !(self.max_requests_per_sec.is_finite() && self.max_requests_per_sec > 0.0) {
            return invalid(format!("max_requests_per_sec must be positive, got {}", self.max_requests_per_sec));
        }
        let is_http = self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://");
        match self.kind {
            SourceKind::FileImport if is_http => invalid("file_import needs a file path".into()),
            SourceKind::FileImport => Ok(()),
            _ if !is_http => invalid(format!("{:?} needs an http(s) endpoint", self.kind)),
            _ => {
                url::Url::parse(&self.endpoint).map_err(|e| CollectError::InvalidSource {
                    source_id: self.source_id.clone(),
                    detail: e.to_string(),
                })?;
                if let Some(rule) = &self.extraction {
                    LinkRule::parse(rule).map_err(|detail| CollectError::InvalidSource {
                        source_id: self.source_id.clone(),
                        detail,
                    })?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FetchRecord {
    pub url: String,
    pub fetched_at: DateTime<Utc>,
    #[serde(default)]
    pub title: Option<String>,
    pub raw: String,
    #[serde(default)]
    pub declared_date: Option<NaiveDate>,
}

/// Records gathered from one source plus every failure met on the way.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FetchOutcome {
    pub records: Vec<FetchRecord>,
    pub errors: Vec<CollectError>,
}

/// Fetches sources through one transport, honouring robots.txt per host.
pub struct Collector<'a> {
    transport: &'a dyn Transport,
    robots: Mutex<BTreeMap<String, Robots>>,
}

impl<'a> Collector<'a> {
    pub fn new(transport: &'a dyn Transport) -> Self {
        Self {
            transport,
            robots: Mutex::new(BTreeMap::new()),
        }
    }

    fn robots_for(&self, url: &url::Url, limiter: &RateLimiter) -> Robots {
        let origin = url.origin().ascii_serialization();
        if let Some(r) = self.robots.lock().unwrap_or_else(|e| e.into_inner()).get(&origin) {
            return r.clone();
        }
        let robots_url = format!("{origin}/robots.txt");
        limiter.acquire();
        let robots = match self.transport.get(&robots_url) {
            Ok(f) if (200..300).contains(&f.status) => Robots::parse(&f.body, USER_AGENT),
            Ok(_) => Robots::allow_all(),
            Err(e) => {
                log::warn!("{e}; assuming no robots.txt restrictions");
                Robots::allow_all()
            }
        };
        self.robots
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(origin, robots.clone());
        robots
    }

    /// Rate-limited GET that fails on robots exclusion and non-2xx status.
    pub fn get(&self, url: &str, limiter: &RateLimiter) -> Result<String, CollectError> {
        let parsed = url::Url::parse(url).map_err(|e| CollectError::Parse {
            url: url.to_string(),
            detail: e.to_string(),
        })?;
        let mut path = parsed.path().to_string();
        if let Some(q) = parsed.query() {
            path.push('?');
            path.push_str(q);
        }
        if !self.robots_for(&parsed, limiter).allows(&path) {
            return Err(CollectError::RobotsDisallowed { url: url.to_string() });
        }
        limiter.acquire();
        let f = self.transport.get(url)?;
        if !(200..300).contains(&f.status) {
            return Err(CollectError::Transport {
                url: url.to_string(),
                status: Some(f.status),
                detail: String::from("unexpected status"),
            });
        }
        Ok(f.body)
    }

    /// Up to `limit` records dated on or after `since` (undated records are
    /// kept). Failures are collected; whatever was fetched is returned.
    pub fn fetch(&self, source: &SourceSpec, limiter: &RateLimiter, since: Option<NaiveDate>, limit: usize) -> FetchOutcome {
        let mut out = FetchOutcome::default();
        if let Err(e) = source.validate() {
            out.errors.push(e);
            return out;
        }
        let keep = |d: Option<NaiveDate>| match (since, d) {
            (Some(s), Some(d)) => d >= s,
            _ => true,
        };
        let now = self.transport.now();
        let push = |out: &mut FetchOutcome, url: String, item: Item| {
            if out.records.len() >= limit || !keep(item.declared_date) || item.raw.trim().is_empty() {
                return;
            }
            let declared_date = item.declared_date.map(|d| {
                if d > now.date_naive() {
                    log::warn!("{url}: declared date {d} is after fetch time; clamping");
                    now.date_naive()
                } else {
                    d
                }
            });
            out.records.push(FetchRecord {
                url,
                fetched_at: now,
                title: item.title,
                raw: item.raw,
                declared_date,
            });
        };

        match source.kind {
            SourceKind::Rss | SourceKind::ArxivApi => {
                let body = match self.get(&source.endpoint, limiter) {
                    Ok(b) => b,
                    Err(e) => {
                        out.errors.push(e);
                        return out;
                    }
                };
                let parsed = if source.kind == SourceKind::Rss {
                    parse::parse_feed(&body)
                } else {
                    parse::parse_arxiv(&body)
                };
                match parsed {
                    Ok(items) => {
                        for it in items {
                            let url = it.url.clone().unwrap_or_else(|| source.endpoint.clone());
                            push(&mut out, url, it);
                        }
                    }
                    Err(detail) => out.errors.push(CollectError::Parse {
                        url: source.endpoint.clone(),
                        detail,
                    }),
                }
            }
            SourceKind::HttpList => {
                let body = match self.get(&source.endpoint, limiter) {
                    Ok(b) => b,
                    Err(e) => {
                        out.errors.push(e);
                        return out;
                    }
                };
                let base = url::Url::parse(&source.endpoint).expect("validated");
                let rule = match &source.extraction {
                    Some(r) => LinkRule::parse(r).expect("validated"),
                    None => LinkRule::any(),
                };
                for link in parse::extract_links(&body, &base, &rule) {
                    if out.records.len() >= limit {
                        break;
                    }
                    match self.get(&link, limiter) {
                        Ok(page) => {
                            let (title, declared_date) = parse::page_metadata(&page);
                            let item = Item {
                                url: Some(link.clone()),
                                title,
                                raw: page,
                                declared_date,
                            };
                            push(&mut out, link, item);
                        }
                        Err(e) => out.errors.push(e),
                    }
                }
            }
            SourceKind::WikiRecent => {
                let list_url = wiki_url(
                    &source.endpoint,
                    &[
                        ("action", "query"),
                        ("list", "recentchanges"),
                        ("rctype", "new"),
                        ("rcnamespace", "0"),
                        ("rcprop", "title|timestamp"),
                        ("rclimit", &limit.min(500).to_string()),
                        ("format", "json"),
                    ],
                );
                let listing = self
                    .get(&list_url, limiter)
                    .and_then(|b| parse::parse_recent_changes(&b).map_err(|detail| CollectError::Parse { url: list_url.clone(), detail }));
                let changes = match listing {
                    Ok(c) => c,
                    Err(e) => {
                        out.errors.push(e);
                        return out;
                    }
                };
                for (title, date) in changes {
                    if out.records.len() >= limit {
                        break;
                    }
                    if !keep(date) {
                        continue;
                    }
                    let page_url = wiki_url(
                        &source.endpoint,
                        &[
                            ("action", "query"),
                            ("prop", "extracts"),
                            ("explaintext", "1"),
                            ("format", "json"),
                            ("titles", &title),
                        ],
                    );
                    let extract = self
                        .get(&page_url, limiter)
                        .and_then(|b| parse::parse_extract(&b).map_err(|detail| CollectError::Parse { url: page_url.clone(), detail }));
                    match extract {
                        Ok(raw) => push(
                            &mut out,
                            page_url.clone(),
                            Item {
                                url: Some(page_url),
                                title: Some(title),
                                raw,
                                declared_date: date,
                            },
                        ),
                        Err(e) => out.errors.push(e),
                    }
                }
            }
            SourceKind::FileImport => match import_file(Path::new(&source.endpoint)) {
                Ok(items) => {
                    for it in items {
                        let url = it.url.clone().unwrap_or_else(|| source.endpoint.clone());
                        push(&mut out, url, it);
                    }
                }
                Err(e) => out.errors.push(e),
            },
        }
        out
    }
}

fn wiki_url(endpoint: &str, params: &[(&str, &str)]) -> String {
    let mut u = url::Url::parse(endpoint).expect("validated");
    u.query_pairs_mut().extend_pairs(params);
    u.to_string()
}

#[derive(Deserialize)]
struct ImportLine {
    #[serde(default)]
    url: Option<String>,
    #[serde(default)]
    title: Option<String>,
    #[serde(alias = "body")]
    raw: String,
    #[serde(default)]
    declared_date: Option<NaiveDate>,
}

/// JSON Lines of `{"raw" | "body", "title"?, "url"?, "declared_date"?}`.
fn import_file(path: &Path) -> Result<Vec<Item>, CollectError> {
    let url = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| CollectError::Transport {
        url: url.clone(),
        status: None,
        detail: e.to_string(),
    })?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let rec: ImportLine = serde_json::from_str(l).map_err(|e| CollectError::Parse {
                url: format!("{url}:{}", i + 1),
                detail: e.to_string(),
            })?;
            Ok(Item {
                url: rec.url,
                title: rec.title,
                raw: rec.raw,
                declared_date: rec.declared_date,
            })
        })
        .collect()
}

/// Documents built from records, with what was rejected.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Conversion {
    pub documents: Vec<Document>,
    pub rejected: Vec<(String, Rejection)>,
    /// Records whose cleaned body matched an earlier document.
    pub duplicates: usize,
}

/// Clean each record into a document dated by its declared date, or by the
/// fetch date when none was declared.
pub fn to_documents(records: &[FetchRecord], source: &SourceSpec) -> Conversion {
    let mut out = Conversion::default();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        let observed_at = r.declared_date.unwrap_or_else(|| r.fetched_at.date_naive());
        let mut meta = DocumentMeta::new(source.source_id.clone(), observed_at).category(source.category);
        if let Some(t) = &r.title {
            meta = meta.title(t.clone());
        }
        match preprocess(&r.raw, meta) {
            Ok(doc) => {
                if seen.insert(doc.doc_id.clone()) {
                    out.documents.push(doc);
                } else {
                    out.duplicates += 1;
                }
            }
            Err(rej) => out.rejected.push((r.url.clone(), rej)),
        }
    }
    out
}

/// Fetch several sources on at most `workers` threads. Each source gets
/// its own limiter; outcomes come back in source order.
pub fn fetch_all(
    sources: &[SourceSpec],
    transport: &dyn Transport,
    workers: usize,
    since: Option<NaiveDate>,
    limit: usize,
) -> Vec<FetchOutcome> {
    let collector = Collector::new(transport);
    let slots: Vec<Mutex<Option<FetchOutcome>>> = sources.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers.clamp(1, sources.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(src) = sources.get(i) else { break };
                let limiter = RateLimiter::new(if src.max_requests_per_sec > 0.0 { src.max_requests_per_sec } else { 1.0 });
                let outcome = collector.fetch(src, &limiter, since, limit);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(outcome);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().unwrap_or_else(|e| e.into_inner()).unwrap_or_default())
        .collect()
}
