//! The bundled Jon/Gina case study, replayed end to end.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::ama::{run_dialogue, Agents, AmaError, DialogueArtifacts, ExtractionStrategy, QaRecord};
use crate::config::RunConfig;
use crate::dialogue::{parse_corpus, CorpusError, CorpusFormat};
use crate::embedding::LocalEmbedder;
use crate::llm::{Gateway, LlmError, ReplayLog, ScriptedBackend};
use crate::prompts::PromptSet;

pub const CORPUS: &str = include_str!("../fixtures/table5/corpus.json");
pub const REPLAY: &str = include_str!("../fixtures/table5/replay.jsonl");

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Ama(#[from] AmaError),
}

pub fn demo_config() -> RunConfig {
    let mut config = RunConfig::default();
    config.ama.qa_per_session = 3;
    config.ama.max_rounds = 2;
    config
}

pub struct DemoOutcome {
    pub artifacts: DialogueArtifacts,
    pub transcript: String,
}

fn write_records(out: &mut String, records: &[QaRecord]) {
    for (i, r) in records.iter().enumerate() {
        let mark = if r.verdict.correct { "\u{2713}" } else { "\u{2717}" };
        let _ = writeln!(out, "  QA {} [{mark}] {}", i + 1, r.qa.question);
        let _ = writeln!(out, "      reference: {}", r.qa.gold_answer);
        let _ = writeln!(out, "      memory:    {}", r.verdict.predicted_answer);
        if !r.verdict.correct {
            let _ = writeln!(out, "      defect:    {}", r.verdict.defect);
        }
    }
}

pub fn render_transcript(artifacts: &DialogueArtifacts) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Case study: dialogue {}", artifacts.dialogue_id);
    for report in &artifacts.sessions {
        let _ = writeln!(out, "\nSession {}: memory built from the raw dialogue", report.session_index);
        for id in &report.constructed {
            if let Some(e) = artifacts.store.get(id) {
                let _ = writeln!(out, "  - {}", e.summary);
            }
        }
        for round in &report.rounds {
            let _ = writeln!(out, "\nRound {}: {}/{} passed", round.round, round.pass.passed, round.pass.total);
            write_records(&mut out, &round.records);
            if let Some(update) = &round.update {
                let _ = writeln!(out, "\nMissing summary:");
                for s in &update.memory_supplements {
                    let _ = writeln!(out, "  {s}");
                }
                let _ = writeln!(out, "\nImprove instruction:");
                let _ = writeln!(out, "  {}", update.strategy_amendment);
            }
        }
        if let Some(follow_up) = &report.follow_up {
            let _ = writeln!(out, "\nRe-check after update:");
            write_records(&mut out, follow_up);
        }
        if let (Some(pre), Some(post)) = (report.pre, report.post) {
            let _ = writeln!(out, "\nPass rate: {}/{} -> {}/{}", pre.passed, pre.total, post.passed, post.total);
        }
    }
    let _ = writeln!(out, "Strategy version: {}", artifacts.strategy.version);
    out
}

/// Replays the case study from the bundled replay log.
pub fn run_demo() -> Result<DemoOutcome, DemoError> {
    let corpus = parse_corpus(CORPUS, CorpusFormat::Native)?;
    let config = demo_config();
    let backend = ScriptedBackend::new(ReplayLog::parse(REPLAY)?);
    let gateway = Gateway::new(Arc::new(backend), config.llm.clone(), PromptSet::default());
    let embedder = LocalEmbedder::new(config.embedding.dimension, config.embedding.seed);
    let agents = Agents { gateway: &gateway, embedder: &embedder, store_config: &config.store };
    let dialogue = &corpus.dialogues[0];
    let strategy = ExtractionStrategy::new(gateway.prompts().base_strategy.clone());
    let artifacts = run_dialogue(dialogue, strategy, &config.ama, agents);
    let transcript = render_transcript(&artifacts);
    Ok(DemoOutcome { artifacts, transcript })
}
