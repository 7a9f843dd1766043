use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::CollectError;

/// A fetched response body.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fetched {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn get(&self, url: &str) -> Result<Fetched, CollectError>;

    /// Timestamp recorded on records fetched now.
    fn now(&self) -> DateTime<Utc>;
}

pub const USER_AGENT: &str = concat!("tempora/", env!("CARGO_PKG_VERSION"));

/// Live HTTP.
pub struct HttpTransport {
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .user_agent(USER_AGENT)
            .build()
            .into();
        Self { agent }
    }
}

impl Default for HttpTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

impl Transport for HttpTransport {
    fn get(&self, url: &str) -> Result<Fetched, CollectError> {
        let mut resp = self.agent.get(url).call().map_err(|e| CollectError::Transport {
            url: url.to_string(),
            status: None,
            detail: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| CollectError::Transport {
            url: url.to_string(),
            status: Some(status),
            detail: e.to_string(),
        })?;
        Ok(Fetched { status, body })
    }

    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Recorded responses keyed by URL, with a frozen clock.
#[derive(Debug, Clone)]
pub struct FixtureTransport {
    pages: BTreeMap<String, Fetched>,
    fetched_at: DateTime<Utc>,
}

#[derive(Deserialize)]
struct FixtureIndex {
    fetched_at: DateTime<Utc>,
    pages: BTreeMap<String, FixtureEntry>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureEntry {
    File(String),
    Full {
        file: Option<String>,
        #[serde(default = "ok_status")]
        status: u16,
    },
}

fn ok_status() -> u16 {
    200
}

impl FixtureTransport {
    pub fn new(fetched_at: DateTime<Utc>) -> Self {
        Self {
            pages: BTreeMap::new(),
            fetched_at,
        }
    }

    pub fn with_page(mut self, url: impl Into<String>, body: impl Into<String>) -> Self {
        self.pages.insert(url.into(), Fetched { status: 200, body: body.into() });
        self
    }

    pub fn with_status(mut self, url: impl Into<String>, status: u16) -> Self {
        self.pages.insert(url.into(), Fetched { status, body: String::new() });
        self
    }

    /// Read `index.json` from `dir`:
    /// `{"fetched_at": RFC 3339, "pages": {url: file | {"file", "status"}}}`
    /// with file names relative to `dir`.
    pub fn from_dir(dir: &Path) -> Result<Self, CollectError> {
        let index_path = dir.join("index.json");
        let bad = |detail: String| CollectError::Parse {
            url: index_path.display().to_string(),
            detail,
        };
        let text = fs::read_to_string(&index_path).map_err(|e| bad(e.to_string()))?;
        let index: FixtureIndex = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        let mut out = Self::new(index.fetched_at);
        for (url, entry) in index.pages {
            let (file, status) = match entry {
                FixtureEntry::File(f) => (Some(f), 200),
                FixtureEntry::Full { file, status } => (file, status),
            };
            let body = match file {
                Some(f) => fs::read_to_string(dir.join(&f)).map_err(|e| bad(format!("{f}: {e}")))?,
                None => String::new(),
            };
            out.pages.insert(url, Fetched { status, body });
        }
        Ok(out)
    }
}

impl Transport for FixtureTransport {
    fn get(&self, url: &str) -> Result<Fetched, CollectError> {
        if let Some(page) = self.pages.get(url) {
            return Ok(page.clone());
        }
        // An unrecorded robots.txt behaves like a missing file.
        if url.ends_with("/robots.txt") {
            return Ok(Fetched { status: 404, body: String::new() });
        }
        Err(CollectError::Transport {
            url: url.to_string(),
            status: None,
            detail: String::from("no recorded response"),
        })
    }

    fn now(&self) -> DateTime<Utc> {
        self.fetched_at
    }
}
