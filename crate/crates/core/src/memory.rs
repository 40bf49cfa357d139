//! The memory repository AMA plugs into.
//!
//! Construction asks the summarizer role for `SUMMARY | kw1, kw2` lines under
//! the current extraction strategy. Updates suppress near-duplicates and link
//! each new entry to its most similar neighbours (links are bidirectional).
//! Retrieval is an exact cosine scan, which is plenty for stores of a few
//! thousand entries.

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ama::ExtractionStrategy;
use crate::dialogue::{session_text, Session};
use crate::embedding::{cosine, Embedder, EmbeddingError, EmbeddingVector};
use crate::llm::{Gateway, LlmError, RoleTag};
use crate::text::frequency_keywords;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("summarizer returned an empty response")]
    EmptyResponse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StoreConfig {
    pub dup_threshold: f64,
    pub link_threshold: f64,
    pub max_links: usize,
    pub max_entries_per_session: usize,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig { dup_threshold: 0.95, link_threshold: 0.60, max_links: 3, max_entries_per_session: 16 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntrySource {
    Session {
        dialogue_id: String,
        session_index: u32,
        first_turn_id: String,
        last_turn_id: String,
    },
    AdapterSupplement { dialogue_id: String, session_index: u32 },
}

impl EntrySource {
    pub fn session_ref(&self) -> (&str, u32) {
        match self {
            EntrySource::Session { dialogue_id, session_index, .. }
            | EntrySource::AdapterSupplement { dialogue_id, session_index } => (dialogue_id, *session_index),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Constructed,
    AdapterSupplement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub entry_id: String,
    pub summary: String,
    pub keywords: Vec<String>,
    pub timestamp_label: String,
    pub source: EntrySource,
    pub embedding: EmbeddingVector,
    pub links: Vec<String>,
    pub provenance: Provenance,
    pub created_seq: u64,
}

/// An entry that has not been inserted yet (no id, no links).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewEntry {
    pub summary: String,
    pub keywords: Vec<String>,
    pub timestamp_label: String,
    pub source: EntrySource,
    pub embedding: EmbeddingVector,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryStore {
    pub dialogue_id: String,
    entries: Vec<MemoryEntry>,
    next_seq: u64,
}

impl MemoryStore {
    pub fn new(dialogue_id: impl Into<String>) -> Self {
        MemoryStore { dialogue_id: dialogue_id.into(), entries: Vec::new(), next_seq: 1 }
    }

    /// Rebuilds a store from persisted parts, checking its invariants.
    pub fn from_parts(dialogue_id: String, entries: Vec<MemoryEntry>, next_seq: u64) -> Result<Self, String> {
        let store = MemoryStore { dialogue_id, entries, next_seq };
        store.check_invariants()?;
        Ok(store)
    }

    pub fn entries(&self) -> &[MemoryEntry] {
        &self.entries
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, entry_id: &str) -> Option<&MemoryEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }

    pub fn count_provenance(&self, provenance: Provenance) -> usize {
        self.entries.iter().filter(|e| e.provenance == provenance).count()
    }

    /// Drops the constructed entries of one session and any links to them.
    /// Supplements are kept. Returns the number removed.
    pub fn remove_constructed(&mut self, dialogue_id: &str, session_index: u32) -> usize {
        let doomed: Vec<String> = self
            .entries
            .iter()
            .filter(|e| e.provenance == Provenance::Constructed && e.source.session_ref() == (dialogue_id, session_index))
            .map(|e| e.entry_id.clone())
            .collect();
        self.entries.retain(|e| !doomed.contains(&e.entry_id));
        for e in &mut self.entries {
            e.links.retain(|l| !doomed.contains(l));
        }
        doomed.len()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mut prev = 0;
        for e in &self.entries {
            if e.created_seq <= prev {
                return Err(format!("created_seq not increasing at {}", e.entry_id));
            }
            prev = e.created_seq;
            if self.entries.iter().filter(|o| o.entry_id == e.entry_id).count() != 1 {
                return Err(format!("duplicate entry_id {}", e.entry_id));
            }
            if let Some(bad) = e.links.iter().find(|l| self.get(l).is_none()) {
                return Err(format!("{} links to missing entry {bad}", e.entry_id));
            }
            let supplement = matches!(e.source, EntrySource::AdapterSupplement { .. });
            if supplement != (e.provenance == Provenance::AdapterSupplement) {
                return Err(format!("{}: provenance does not match source", e.entry_id));
            }
        }
        if self.next_seq <= prev {
            return Err(format!("next_seq {} not above max created_seq {prev}", self.next_seq));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DedupEvent {
    pub summary: String,
    pub duplicate_of: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub inserted: Vec<String>,
    pub deduplicated: Vec<DedupEvent>,
}

fn entry_id(seq: u64) -> String {
    format!("m{seq:06}")
}

/// Inserts new entries one at a time: near-duplicates of anything already in
/// the store are skipped, the rest are linked to their closest neighbours.
pub fn update_store(
    store: &mut MemoryStore,
    new_entries: Vec<NewEntry>,
    config: &StoreConfig,
) -> Result<UpdateOutcome, MemoryError> {
    let mut outcome = UpdateOutcome::default();
    for new in new_entries {
        let mut scored = Vec::with_capacity(store.entries.len());
        for (i, e) in store.entries.iter().enumerate() {
            scored.push((cosine(&new.embedding, &e.embedding)?, i));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(store.entries[a.1].created_seq.cmp(&store.entries[b.1].created_seq)));

        if let Some(&(sim, i)) = scored.first().filter(|(sim, _)| *sim >= config.dup_threshold) {
            let duplicate_of = store.entries[i].entry_id.clone();
            info!("dedup: {:?} duplicates {duplicate_of} (cosine {sim:.4})", new.summary);
            outcome.deduplicated.push(DedupEvent { summary: new.summary, duplicate_of, similarity: sim });
            continue;
        }

        let seq = store.next_seq;
        let id = entry_id(seq);
        let targets: Vec<usize> = scored
            .iter()
            .filter(|(sim, _)| *sim >= config.link_threshold)
            .take(config.max_links)
            .map(|(_, i)| *i)
            .collect();
        let links: Vec<String> = targets.iter().map(|&i| store.entries[i].entry_id.clone()).collect();
        for &i in &targets {
            store.entries[i].links.push(id.clone());
        }
        debug!("insert {id} with links {links:?}");
        store.entries.push(MemoryEntry {
            entry_id: id.clone(),
            summary: new.summary,
            keywords: new.keywords,
            timestamp_label: new.timestamp_label,
            source: new.source,
            embedding: new.embedding,
            links,
            provenance: new.provenance,
            created_seq: seq,
        });
        store.next_seq += 1;
        outcome.inserted.push(id);
    }
    Ok(outcome)
}

/// Top-`k` entries by cosine to the query with their scores, best first;
/// ties go to the older entry.
pub fn retrieve_scored<'s>(
    store: &'s MemoryStore,
    query: &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<(f64, &'s MemoryEntry)>, MemoryError> {
    if k == 0 || store.is_empty() {
        return Ok(Vec::new());
    }
    let q = embedder.embed(query)?;
    let mut scored = Vec::with_capacity(store.len());
    for e in &store.entries {
        scored.push((cosine(&q, &e.embedding)?, e));
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.created_seq.cmp(&b.1.created_seq)));
    scored.truncate(k);
    Ok(scored)
}

pub fn retrieve<'s>(
    store: &'s MemoryStore,
    query: &str,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<Vec<&'s MemoryEntry>, MemoryError> {
    Ok(retrieve_scored(store, query, k, embedder)?.into_iter().map(|(_, e)| e).collect())
}

/// Memory context for answering: one block per entry, blank-line separated.
pub fn render_context<'a>(entries: impl IntoIterator<Item = &'a MemoryEntry>) -> String {
    entries
        .into_iter()
        .map(|e| {
            let mut block = String::new();
            if !e.timestamp_label.is_empty() {
                block.push_str(&format!("[{}] ", e.timestamp_label));
            }
            block.push_str(&e.summary);
            if !e.keywords.is_empty() {
                block.push_str(&format!("\nkeywords: {}", e.keywords.join(", ")));
            }
            block
        })
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSummary {
    pub entries: Vec<(String, Vec<String>)>,
    pub degraded: bool,
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let line = line.trim_start_matches(['-', '*', '\u{2022}']).trim_start();
    match line.split_once(['.', ')']) {
        Some((num, rest)) if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) => rest.trim_start(),
        _ => line,
    }
}

/// Parses `SUMMARY | kw1, kw2` lines. When no line has the separator the whole
/// response becomes a single entry with frequency keywords.
pub fn parse_summarizer_response(text: &str, max_entries: usize) -> ParsedSummary {
    let mut entries = Vec::new();
    let mut skipped = 0;
    for line in text.lines().map(strip_list_marker).filter(|l| !l.is_empty()) {
        match line.split_once('|') {
            Some((summary, kws)) if !summary.trim().is_empty() => {
                let keywords = kws
                    .split(',')
                    .map(|k| k.trim().to_lowercase())
                    .filter(|k| !k.is_empty())
                    .collect();
                entries.push((summary.trim().to_owned(), keywords));
            }
            _ => skipped += 1,
        }
    }
    if entries.is_empty() {
        let raw = text.trim();
        if raw.is_empty() {
            return ParsedSummary { entries, degraded: true };
        }
        return ParsedSummary {
            entries: vec![(raw.to_owned(), frequency_keywords(raw, 5))],
            degraded: true,
        };
    }
    if skipped > 0 {
        warn!("summarizer: ignored {skipped} line(s) without a `|` separator");
    }
    if entries.len() > max_entries {
        warn!("summarizer: truncating {} entries to {max_entries}", entries.len());
        entries.truncate(max_entries);
    }
    ParsedSummary { entries, degraded: false }
}

/// Distills one session into new entries under `strategy`.
pub fn construct_session_memory(
    dialogue_id: &str,
    session: &Session,
    strategy: &ExtractionStrategy,
    gateway: &Gateway,
    embedder: &dyn Embedder,
    config: &StoreConfig,
) -> Result<Vec<NewEntry>, MemoryError> {
    if session.turns.is_empty() {
        debug!("{dialogue_id} session {}: no turns, nothing to construct", session.session_index);
        return Ok(Vec::new());
    }
    let system = strategy.render(gateway.prompts());
    let response = gateway.ask(RoleTag::MemorySummarizer, system, session_text(session))?;
    let parsed = parse_summarizer_response(&response, config.max_entries_per_session);
    if parsed.entries.is_empty() {
        return Err(MemoryError::EmptyResponse);
    }
    if parsed.degraded {
        warn!(
            "{dialogue_id} session {}: unparseable summarizer output, stored raw text as one entry",
            session.session_index
        );
    }
    let source = EntrySource::Session {
        dialogue_id: dialogue_id.to_owned(),
        session_index: session.session_index,
        first_turn_id: session.turns.first().map(|t| t.turn_id.clone()).unwrap_or_default(),
        last_turn_id: session.turns.last().map(|t| t.turn_id.clone()).unwrap_or_default(),
    };
    parsed
        .entries
        .into_iter()
        .map(|(summary, keywords)| {
            Ok(NewEntry {
                embedding: embedder.embed(&summary)?,
                summary,
                keywords,
                timestamp_label: session.date_label.clone(),
                source: source.clone(),
                provenance: Provenance::Constructed,
            })
        })
        .collect()
}
