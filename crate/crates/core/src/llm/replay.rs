//! Record/replay of model calls keyed by request digest.
//!
//! Replay files are JSON-lines, one [`ReplayEntry`] per line, digests unique.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use log::debug;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError};
use crate::canonical;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub request_digest: String,
    pub role_tag: String,
    pub response_text: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplayLog {
    entries: Vec<ReplayEntry>,
    index: HashMap<String, usize>,
}

impl ReplayLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let mut log = ReplayLog::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(line)
                .map_err(|e| LlmError::Replay(format!("line {}: {e}", n + 1)))?;
            if log.index.contains_key(&entry.request_digest) {
                return Err(LlmError::Replay(format!(
                    "line {}: duplicate digest {}",
                    n + 1,
                    entry.request_digest
                )));
            }
            log.push(entry);
        }
        Ok(log)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))
    }

    fn push(&mut self, entry: ReplayEntry) {
        self.index.insert(entry.request_digest.clone(), self.entries.len());
        self.entries.push(entry);
    }

    /// Adds an entry unless its digest is already present. Returns whether
    /// it was added.
    pub fn insert(&mut self, entry: ReplayEntry) -> bool {
        if self.index.contains_key(&entry.request_digest) {
            return false;
        }
        self.push(entry);
        true
    }

    pub fn get(&self, digest: &str) -> Option<&ReplayEntry> {
        self.index.get(digest).map(|&i| &self.entries[i])
    }

    pub fn entries(&self) -> &[ReplayEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn retain(&mut self, keep: impl Fn(&ReplayEntry) -> bool) {
        let kept: Vec<ReplayEntry> = self.entries.drain(..).filter(|e| keep(e)).collect();
        self.index.clear();
        for e in kept {
            self.push(e);
        }
    }

    /// Recorded entry for the same role whose digest differs in the fewest
    /// hex positions; a starting point when repairing fixtures.
    pub fn nearest(&self, role_tag: &str, digest: &str) -> Option<&ReplayEntry> {
        self.entries
            .iter()
            .filter(|e| e.role_tag == role_tag)
            .min_by_key(|e| {
                let mismatched = e
                    .request_digest
                    .bytes()
                    .zip(digest.bytes())
                    .filter(|(a, b)| a != b)
                    .count();
                mismatched + e.request_digest.len().abs_diff(digest.len())
            })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&canonical::to_line(e).expect("replay entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_jsonl())
    }
}

/// Serves responses from a replay log; misses are errors.
pub struct ScriptedBackend {
    log: ReplayLog,
}

impl ScriptedBackend {
    pub fn new(log: ReplayLog) -> Self {
        ScriptedBackend { log }
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        Ok(ScriptedBackend::new(ReplayLog::load(path)?))
    }

    pub fn log(&self) -> &ReplayLog {
        &self.log
    }
}

fn miss(log: &ReplayLog, request: &ChatRequest, digest: &str) -> LlmError {
    let role = request.role_tag.as_str();
    LlmError::ReplayMiss {
        role_tag: role.to_owned(),
        digest: digest.to_owned(),
        nearest: log.nearest(role, digest).map(|e| e.request_digest.clone()),
    }
}

impl ChatBackend for ScriptedBackend {
    fn id(&self) -> &str {
        "scripted-replay"
    }

    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, LlmError> {
        self.log
            .get(digest)
            .map(|e| e.response_text.clone())
            .ok_or_else(|| miss(&self.log, request, digest))
    }
}

struct RecordState {
    log: ReplayLog,
    sink: Option<(PathBuf, File)>,
}

/// Answers from the existing log when possible, otherwise forwards to the
/// inner backend and appends the new entry (to the file as well, when one is
/// attached). Appends are serialized.
pub struct RecordingBackend<B> {
    inner: B,
    state: Mutex<RecordState>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn in_memory(inner: B, log: ReplayLog) -> Self {
        RecordingBackend { inner, state: Mutex::new(RecordState { log, sink: None }) }
    }

    /// Opens (or creates) `path`, loading entries already recorded there.
    pub fn to_file(inner: B, path: &Path) -> Result<Self, LlmError> {
        let log = if path.exists() { ReplayLog::load(path)? } else { ReplayLog::new() };
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend {
            inner,
            state: Mutex::new(RecordState { log, sink: Some((path.to_path_buf(), file)) }),
        })
    }

    pub fn snapshot(&self) -> ReplayLog {
        self.state.lock().expect("recorder lock").log.clone()
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn id(&self) -> &str {
        "scripted-record"
    }

    fn complete(&self, request: &ChatRequest, digest: &str) -> Result<String, LlmError> {
        if let Some(hit) = self.state.lock().expect("recorder lock").log.get(digest) {
            return Ok(hit.response_text.clone());
        }
        let text = self.inner.complete(request, digest)?;
        let entry = ReplayEntry {
            request_digest: digest.to_owned(),
            role_tag: request.role_tag.as_str().to_owned(),
            response_text: text.clone(),
        };
        let mut state = self.state.lock().expect("recorder lock");
        if state.log.insert(entry.clone()) {
            if let Some((path, file)) = state.sink.as_mut() {
                let line = canonical::to_line(&entry).expect("replay entry serializes");
                writeln!(file, "{line}")
                    .and_then(|_| file.flush())
                    .map_err(|e| LlmError::Replay(format!("{}: {e}", path.display())))?;
            }
            debug!("recorded {} response {}", entry.role_tag, &entry.request_digest[..12]);
        }
        Ok(text)
    }
}
