//! Run directories and store files.
//!
//! Layout of a run directory:
//!
//! ```text
//! run.json                    manifest: config snapshot, corpus digest, file list
//! <id>.memstore.jsonl         header line, then one memory entry per line
//! <id>.strategy.json          final extraction strategy
//! <id>.sessions.json          per-session loop reports
//! ```
//!
//! Every file carries `"version": "1.0"` and is written canonically, so equal
//! artifacts always produce equal bytes.

use std::path::{Path, PathBuf};

use log::warn;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ama::{DialogueArtifacts, ExtractionStrategy, RunArtifacts, SessionReport};
use crate::canonical;
use crate::config::{sha256_hex, RunConfig, SCHEMA_VERSION};
use crate::dialogue::Corpus;
use crate::memory::{MemoryEntry, MemoryStore};

pub const MANIFEST_FILE: &str = "run.json";

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Corrupt { path: PathBuf, line: usize, message: String },
    #[error("{}: not a run directory (no run.json)", path.display())]
    NotARunDir { path: PathBuf },
    #[error("{}: unsupported schema version {found}", path.display())]
    Version { path: PathBuf, found: String },
    #[error("dialogue ids {0:?} and {1:?} map to the same file name")]
    NameClash(String, String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub run_id: String,
    pub config_snapshot: RunConfig,
    pub corpus_digest: String,
    pub started_at: Option<String>,
    pub finished_at: Option<String>,
    pub dialogues: Vec<String>,
    pub artifact_paths: Vec<String>,
}

impl RunManifest {
    /// The run id is derived from the corpus and config, so reruns of the same
    /// inputs get the same id.
    pub fn new(config: RunConfig, corpus_digest: String) -> Self {
        let run_id = sha256_hex(format!("{corpus_digest}:{}", config.digest()).as_bytes())[..16].to_owned();
        RunManifest {
            version: SCHEMA_VERSION.into(),
            run_id,
            config_snapshot: config,
            corpus_digest,
            started_at: None,
            finished_at: None,
            dialogues: Vec::new(),
            artifact_paths: Vec::new(),
        }
    }
}

/// Canonical native JSON for a corpus.
pub fn write_native(corpus: &Corpus) -> String {
    canonical::to_pretty(corpus).expect("corpus serializes")
}

pub fn corpus_digest(corpus: &Corpus) -> String {
    sha256_hex(write_native(corpus).as_bytes())
}

/// File stem for a dialogue id: anything outside `[A-Za-z0-9._-]` becomes `_`.
pub fn file_stem(dialogue_id: &str) -> String {
    let stem: String = dialogue_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') { c } else { '_' })
        .collect();
    if stem.is_empty() || stem.starts_with('.') {
        format!("_{stem}")
    } else {
        stem
    }
}

/// Accepts major version 1; newer minor versions load with a warning.
fn check_version(path: &Path, found: &str) -> Result<(), PersistError> {
    let bad = || PersistError::Version { path: path.to_path_buf(), found: found.to_owned() };
    let (major, minor) = found.split_once('.').ok_or_else(bad)?;
    let (major, minor): (u32, u32) = (major.parse().map_err(|_| bad())?, minor.parse().map_err(|_| bad())?);
    if major != 1 {
        return Err(bad());
    }
    if minor > 0 {
        warn!("{}: schema version {found} is newer than {SCHEMA_VERSION}; loading anyway", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<(), PersistError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<String, PersistError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

fn parse_json<T: DeserializeOwned>(path: &Path, text: &str, line_offset: usize) -> Result<T, PersistError> {
    serde_json::from_str(text).map_err(|e| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: e.line() + line_offset,
        message: e.to_string(),
    })
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    version: String,
    kind: String,
    dialogue_id: String,
    next_seq: u64,
}

pub fn store_to_jsonl(store: &MemoryStore) -> String {
    let header = StoreHeader {
        version: SCHEMA_VERSION.into(),
        kind: "memstore".into(),
        dialogue_id: store.dialogue_id.clone(),
        next_seq: store.next_seq(),
    };
    let mut out = canonical::to_line(&header).expect("header serializes");
    out.push('\n');
    for e in store.entries() {
        out.push_str(&canonical::to_line(e).expect("entry serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_store(path: &Path, text: &str) -> Result<MemoryStore, PersistError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, first) = lines.next().ok_or_else(|| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: 1,
        message: "empty store file".into(),
    })?;
    let header: StoreHeader = parse_json(path, first, 0)?;
    check_version(path, &header.version)?;
    let mut entries = Vec::new();
    for (n, line) in lines {
        let entry: MemoryEntry = parse_json(path, line, n)?;
        entries.push(entry);
    }
    MemoryStore::from_parts(header.dialogue_id, entries, header.next_seq).map_err(|message| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message,
    })
}

pub fn save_store(path: &Path, store: &MemoryStore) -> Result<(), PersistError> {
    write_file(path, &store_to_jsonl(store))
}

pub fn load_store(path: &Path) -> Result<MemoryStore, PersistError> {
    parse_store(path, &read_file(path)?)
}

#[derive(Serialize, Deserialize)]
struct StrategyFile {
    version: String,
    dialogue_id: String,
    strategy: ExtractionStrategy,
}

#[derive(Serialize, Deserialize)]
struct SessionsFile {
    version: String,
    dialogue_id: String,
    error: Option<String>,
    sessions: Vec<SessionReport>,
}

fn load_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, PersistError> {
    let text = read_file(path)?;
    let value: serde_json::Value = parse_json(path, &text, 0)?;
    let version = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
    check_version(path, version)?;
    serde_json::from_value(value).map_err(|e| PersistError::Corrupt {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })
}

/// Writes the run directory and returns the manifest as written.
pub fn save_state(run_dir: &Path, mut manifest: RunManifest, artifacts: &RunArtifacts) -> Result<RunManifest, PersistError> {
    std::fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let mut stems: Vec<(String, &str)> = Vec::new();
    manifest.dialogues.clear();
    manifest.artifact_paths.clear();
    for d in &artifacts.dialogues {
        let stem = file_stem(&d.dialogue_id);
        if let Some((_, other)) = stems.iter().find(|(s, _)| *s == stem) {
            return Err(PersistError::NameClash(other.to_string(), d.dialogue_id.clone()));
        }
        stems.push((stem.clone(), &d.dialogue_id));

        let store_name = format!("{stem}.memstore.jsonl");
        save_store(&run_dir.join(&store_name), &d.store)?;

        let strategy_name = format!("{stem}.strategy.json");
        let strategy = StrategyFile {
            version: SCHEMA_VERSION.into(),
            dialogue_id: d.dialogue_id.clone(),
            strategy: d.strategy.clone(),
        };
        write_file(&run_dir.join(&strategy_name), &canonical::to_pretty(&strategy).expect("strategy serializes"))?;

        let sessions_name = format!("{stem}.sessions.json");
        let sessions = SessionsFile {
            version: SCHEMA_VERSION.into(),
            dialogue_id: d.dialogue_id.clone(),
            error: d.error.clone(),
            sessions: d.sessions.clone(),
        };
        write_file(&run_dir.join(&sessions_name), &canonical::to_pretty(&sessions).expect("sessions serialize"))?;

        manifest.dialogues.push(d.dialogue_id.clone());
        manifest.artifact_paths.extend([store_name, strategy_name, sessions_name]);
    }
    let path = run_dir.join(MANIFEST_FILE);
    write_file(&path, &canonical::to_pretty(&manifest).expect("manifest serializes"))?;
    Ok(manifest)
}

pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, PersistError> {
    let path = run_dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(PersistError::NotARunDir { path: run_dir.to_path_buf() });
    }
    load_versioned(&path)
}

pub fn load_state(run_dir: &Path) -> Result<RunArtifacts, PersistError> {
    let manifest = load_manifest(run_dir)?;
    let mut dialogues = Vec::with_capacity(manifest.dialogues.len());
    for id in &manifest.dialogues {
        let stem = file_stem(id);
        let store = load_store(&run_dir.join(format!("{stem}.memstore.jsonl")))?;
        let strategy: StrategyFile = load_versioned(&run_dir.join(format!("{stem}.strategy.json")))?;
        let sessions: SessionsFile = load_versioned(&run_dir.join(format!("{stem}.sessions.json")))?;
        dialogues.push(DialogueArtifacts {
            dialogue_id: id.clone(),
            store,
            strategy: strategy.strategy,
            sessions: sessions.sessions,
            error: sessions.error,
        });
    }
    Ok(RunArtifacts { dialogues })
}
