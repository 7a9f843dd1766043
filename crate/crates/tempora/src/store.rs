//! On-disk run store.
//!
//! ```text
//! <root>/runs/<run_id>/manifest.json
//!                      scores.jsonl  series.json  predictions.jsonl  analysis.json
//!                      reports/...
//! <root>/snapshots/<snapshot_id>/documents.jsonl  summary.json
//! ```
//!
//! Every file is written once. Writing identical bytes again is a no-op;
//! writing different bytes to an existing file is a [`Error::Conflict`].

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::{canonical_json, sha256_hex};
use crate::error::{Error, Result};

/// What a run was computed from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputRefs {
    pub snapshot: Option<String>,
    pub questions_digest: Option<String>,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: DateTime<Utc>,
    pub config_digest: String,
    pub command: String,
    pub input_refs: InputRefs,
}

#[derive(Serialize)]
struct Identity<'a> {
    config_digest: &'a str,
    input_refs: &'a InputRefs,
}

/// First 16 hex digits of SHA-256 over the canonical JSON of
/// `{"config_digest", "input_refs"}`.
pub fn run_id(config_digest: &str, input_refs: &InputRefs) -> String {
    let id = Identity { config_digest, input_refs };
    sha256_hex(canonical_json(&id).as_bytes())[..16].to_string()
}

impl RunManifest {
    pub fn new(config_digest: String, input_refs: InputRefs, command: &str) -> Self {
        Self {
            run_id: run_id(&config_digest, &input_refs),
            created_at: Utc::now(),
            config_digest,
            command: command.to_string(),
            input_refs,
        }
    }

    /// Same run regardless of when or by which command it was created.
    fn same_run(&self, other: &Self) -> bool {
        self.run_id == other.run_id && self.config_digest == other.config_digest && self.input_refs == other.input_refs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WriteOutcome {
    Created,
    Unchanged,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Create the run directory or confirm it belongs to the same run.
    pub fn run(&self, manifest: &RunManifest) -> Result<RunDir> {
        let dir = RunDir {
            run_id: manifest.run_id.clone(),
            path: self.root.join("runs").join(&manifest.run_id),
        };
        fs::create_dir_all(&dir.path).map_err(|e| Error::io(&dir.path, e))?;
        let path = dir.path.join("manifest.json");
        if path.exists() {
            let stored: RunManifest = serde_json::from_str(&read(&path)?).map_err(|e| Error::Schema {
                path: path.clone(),
                line: 1,
                detail: e.to_string(),
            })?;
            if !stored.same_run(manifest) {
                return Err(Error::Conflict {
                    run_id: manifest.run_id.clone(),
                    file: "manifest.json".into(),
                });
            }
        } else {
            let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
            atomic_write(&path, text.as_bytes())?;
        }
        Ok(dir)
    }

    pub fn open_run(&self, run_id: &str) -> Result<RunDir> {
        let path = self.root.join("runs").join(run_id);
        if !path.join("manifest.json").exists() {
            return Err(Error::MissingArtifact(format!("run {run_id} in {}", self.root.display())));
        }
        Ok(RunDir {
            run_id: run_id.to_string(),
            path,
        })
    }

    pub fn snapshot_dir(&self, id: &str) -> PathBuf {
        self.root.join("snapshots").join(id)
    }

    /// Store a document file under its content id.
    pub fn save_snapshot(&self, documents_jsonl: &str, summary_json: &str) -> Result<String> {
        let id = snapshot_id(documents_jsonl.as_bytes());
        let dir = self.snapshot_dir(&id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_once(&dir.join("documents.jsonl"), documents_jsonl.as_bytes(), &id)?;
        // The summary carries error details that may vary between fetches
        // of the same content, so the latest one is kept.
        atomic_write(&dir.join("summary.json"), summary_json.as_bytes())?;
        Ok(id)
    }
}

pub fn snapshot_id(documents_jsonl: &[u8]) -> String {
    sha256_hex(documents_jsonl)[..16].to_string()
}

#[derive(Debug, Clone)]
pub struct RunDir {
    pub run_id: String,
    pub path: PathBuf,
}

impl RunDir {
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<WriteOutcome> {
        let path = self.path.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_once(&path, bytes, &self.run_id).map_err(|e| match e {
            Error::Conflict { run_id, .. } => Error::Conflict {
                run_id,
                file: name.to_string(),
            },
            other => other,
        })
    }

    pub fn read(&self, name: &str) -> Result<String> {
        let path = self.path.join(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(format!("{name} in run {}", self.run_id)));
        }
        read(&path)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path.join(name).exists()
    }

    pub fn manifest(&self) -> Result<RunManifest> {
        let text = self.read("manifest.json")?;
        serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: self.path.join("manifest.json"),
            line: 1,
            detail: e.to_string(),
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_once(path: &Path, bytes: &[u8], run_id: &str) -> Result<WriteOutcome> {
    if path.exists() {
        let existing = fs::read(path).map_err(|e| Error::io(path, e))?;
        return if existing == bytes {
            Ok(WriteOutcome::Unchanged)
        } else {
            Err(Error::Conflict {
                run_id: run_id.to_string(),
                file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
            })
        };
    }
    atomic_write(path, bytes)?;
    Ok(WriteOutcome::Created)
}

/// Write to a sibling temporary file, flush it, then rename over `path`.
fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp.{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(digest: &str) -> RunManifest {
        RunManifest::new(
            digest.to_string(),
            InputRefs {
                snapshot: Some("abc".into()),
                questions_digest: None,
                models: vec!["m".into()],
            },
            "score",
        )
    }

    #[test]
    fn run_id_depends_on_inputs() {
        let a = manifest("d1");
        assert_eq!(a.run_id, manifest("d1").run_id);
        assert_ne!(a.run_id, manifest("d2").run_id);
        assert_eq!(a.run_id.len(), 16);
    }

    #[test]
    fn write_once_semantics() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::new(tmp.path());
        let m = manifest("d");
        let run = store.run(&m).unwrap();
        assert_eq!(run.write("scores.jsonl", b"x\n").unwrap(), WriteOutcome::Created);
        assert_eq!(run.write("scores.jsonl", b"x\n").unwrap(), WriteOutcome::Unchanged);
        match run.write("scores.jsonl", b"y\n") {
            Err(Error::Conflict { file, .. }) => assert_eq!(file, "scores.jsonl"),
            other => panic!("unexpected {other:?}"),
        }
        let mut later = m.clone();
        later.command = "predict".into();
        later.created_at = Utc::now();
        assert!(store.run(&later).is_ok());
        run.write("reports/a.md", b"t").unwrap();
        assert_eq!(run.read("reports/a.md").unwrap(), "t");
        assert!(matches!(run.read("nope"), Err(Error::MissingArtifact(_))));
        let leftovers: Vec<_> = fs::read_dir(&run.path)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp."))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn snapshots_are_content_addressed() {
        let tmp = tempfile::tempdir().unwrap();
        let store = Store::new(tmp.path());
        let a = store.save_snapshot("{}\n", "{}").unwrap();
        let b = store.save_snapshot("{}\n", "{\"x\":1}").unwrap();
        assert_eq!(a, b);
        assert!(store.snapshot_dir(&a).join("documents.jsonl").exists());
    }
}
