//! Fixture access and independent reference implementations used by the
//! integration tests.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use memloop::ama::{run_corpus, Agents, RunArtifacts};
use memloop::config::RunConfig;
use memloop::dialogue::{load_corpus, Corpus, CorpusFormat};
use memloop::embedding::{EmbeddingVector, LocalEmbedder};
use memloop::llm::{Gateway, ScriptedBackend};
use memloop::memory::MemoryStore;
use memloop::prompts::PromptSet;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn corpus(name: &str) -> Corpus {
    load_corpus(&fixture(name).join("corpus.json"), CorpusFormat::Native).expect("fixture corpus")
}

pub fn gateway(name: &str, config: &RunConfig) -> Gateway {
    let backend = ScriptedBackend::from_file(&fixture(name).join("replay.jsonl")).expect("fixture replay");
    Gateway::new(Arc::new(backend), config.llm.clone(), PromptSet::default())
}

pub fn embedder(config: &RunConfig) -> LocalEmbedder {
    LocalEmbedder::new(config.embedding.dimension, config.embedding.seed)
}

/// Runs the fixture corpus `name` under `config` on its replay file.
pub fn scripted_run(name: &str, config: &RunConfig, parallelism: usize) -> RunArtifacts {
    let corpus = corpus(name);
    let gateway = gateway(name, config);
    let embedder = embedder(config);
    let agents = Agents { gateway: &gateway, embedder: &embedder, store_config: &config.store };
    run_corpus(&corpus, &config.ama, agents, parallelism).expect("scripted run")
}

pub fn config_with(f: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut c = RunConfig::default();
    f(&mut c);
    c
}

/// Every file in `dir` with its bytes, sorted by name.
pub fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

// Reference scorers. They share nothing with the library beyond the
// normalization rule itself and count overlap by explicit matching.

pub fn ref_tokens(s: &str) -> Vec<String> {
    let mut cleaned = String::new();
    for ch in s.chars() {
        for lower in ch.to_lowercase() {
            if !lower.is_ascii_punctuation() && !"\u{2018}\u{2019}\u{201c}\u{201d}\u{2013}\u{2014}\u{2026}\u{00ab}\u{00bb}\u{00bf}\u{00a1}".contains(lower) {
                cleaned.push(lower);
            }
        }
    }
    cleaned.split_whitespace().filter(|t| *t != "a" && *t != "an" && *t != "the").map(String::from).collect()
}

/// Number of predicted tokens that can each claim a distinct equal gold token.
pub fn ref_overlap(pred: &[String], gold: &[String]) -> usize {
    let mut unused: Vec<Option<&String>> = gold.iter().map(Some).collect();
    let mut hits = 0;
    for p in pred {
        if let Some(slot) = unused.iter_mut().find(|g| g.is_some_and(|g| g == p)) {
            *slot = None;
            hits += 1;
        }
    }
    hits
}

pub fn ref_f1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (ref_tokens(pred), ref_tokens(gold));
    if p.is_empty() && g.is_empty() {
        return 1.0;
    }
    if p.is_empty() || g.is_empty() {
        return 0.0;
    }
    // 2PR/(P+R) with P = o/|p| and R = o/|g| simplifies to 2o/(|p|+|g|).
    2.0 * ref_overlap(&p, &g) as f64 / (p.len() + g.len()) as f64
}

pub fn ref_bleu1(pred: &str, gold: &str) -> f64 {
    let (p, g) = (ref_tokens(pred), ref_tokens(gold));
    if p.is_empty() {
        return 0.0;
    }
    let precision = ref_overlap(&p, &g) as f64 / p.len() as f64;
    let (c, r) = (p.len() as f64, g.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    precision * bp
}

pub fn ref_cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> f64 {
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| f64::from(*x) * f64::from(*y)).sum();
    let na: f64 = a.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.values().iter().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

/// Full scan: every entry scored against the query, best first, older first on ties.
pub fn ref_ranking(store: &MemoryStore, query: &EmbeddingVector) -> Vec<(String, f64)> {
    let mut all: Vec<(String, f64, u64)> = store
        .entries()
        .iter()
        .map(|e| (e.entry_id.clone(), ref_cosine(query, &e.embedding), e.created_seq))
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)));
    all.into_iter().map(|(id, s, _)| (id, s)).collect()
}
