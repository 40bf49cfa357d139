//! The adversarial adaptation loop.
//!
//! Per session: the Challenger writes probe questions from the raw dialogue,
//! the Evaluator answers them from memory and judges each answer, and the
//! Adapter turns the failures into new memory content and an amendment to the
//! extraction strategy. [`run_corpus`] drives this over whole dialogues.

use std::fmt::Write as _;

use log::{debug, info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dialogue::{session_text, Corpus, Dialogue, Session};
use crate::embedding::Embedder;
use crate::llm::{Gateway, LlmError, RoleTag};
use crate::memory::{
    construct_session_memory, render_context, retrieve, update_store, EntrySource, MemoryError, MemoryStore,
    NewEntry, Provenance, StoreConfig,
};
use crate::metrics::{f1_score, normalize_text};
use crate::prompts::PromptSet;
use crate::text::frequency_keywords;

pub const REFUSAL: &str = "I cannot answer this question based on the available memory.";
pub const GATEWAY_ERROR_DEFECT: &str = "gateway-error";
pub const FALLBACK_DEFECT: &str = "auto-fallback: low lexical overlap";
const FALLBACK_F1: f64 = 0.6;
const AUDIT_F1: f64 = 0.5;

#[derive(Debug, Error)]
pub enum AmaError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("challenger response contained no parseable question-answer pairs")]
    NoQuestions,
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStrategy {
    pub base_instruction: String,
    pub amendments: Vec<String>,
    pub version: u32,
}

impl ExtractionStrategy {
    pub fn new(base_instruction: impl Into<String>) -> Self {
        ExtractionStrategy { base_instruction: base_instruction.into(), amendments: Vec::new(), version: 1 }
    }

    /// The summarizer system prompt: base instruction plus amendments.
    pub fn render(&self, prompts: &PromptSet) -> String {
        let mut out = self.base_instruction.clone();
        if !self.amendments.is_empty() {
            let _ = write!(out, "\n\n{}", prompts.strategy_amendments_header);
            for a in &self.amendments {
                let _ = write!(out, "\n- {a}");
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionRef {
    pub dialogue_id: String,
    pub session_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub question: String,
    pub gold_answer: String,
    pub source_session: SessionRef,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub predicted_answer: String,
    pub correct: bool,
    pub defect: String,
}

impl Verdict {
    fn gateway_error(predicted: String) -> Self {
        Verdict { predicted_answer: predicted, correct: false, defect: GATEWAY_ERROR_DEFECT.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub failures: Vec<(QAPair, Verdict)>,
    pub session_ref: SessionRef,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub memory_supplements: Vec<String>,
    pub strategy_amendment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AmaConfig {
    pub qa_per_session: usize,
    pub retrieval_k: usize,
    pub guided_questions: bool,
    pub enable_content_update: bool,
    pub enable_strategy_update: bool,
    pub max_rounds: u32,
    pub reconstruction_pass_threshold: f64,
    /// Log challenger gold answers that barely overlap the session text.
    pub audit_gold_answers: bool,
    /// Thread one strategy through all dialogues instead of one per dialogue.
    pub shared_strategy: bool,
}

impl Default for AmaConfig {
    fn default() -> Self {
        AmaConfig {
            qa_per_session: 3,
            retrieval_k: 10,
            guided_questions: true,
            enable_content_update: true,
            enable_strategy_update: true,
            max_rounds: 1,
            reconstruction_pass_threshold: 0.0,
            audit_gold_answers: false,
            shared_strategy: false,
        }
    }
}

impl AmaConfig {
    pub fn validate(&self) -> Result<(), AmaError> {
        if self.max_rounds == 0 {
            return Err(AmaError::Config("max_rounds must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.reconstruction_pass_threshold) {
            return Err(AmaError::Config("reconstruction_pass_threshold must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// The collaborators every stage needs.
#[derive(Clone, Copy)]
pub struct Agents<'a> {
    pub gateway: &'a Gateway,
    pub embedder: &'a dyn Embedder,
    pub store_config: &'a StoreConfig,
}

/// Passed/total counts; kept as integers so reports round-trip exactly.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCount {
    pub passed: usize,
    pub total: usize,
}

impl PassCount {
    pub fn of(verdicts: &[Verdict]) -> Self {
        PassCount { passed: verdicts.iter().filter(|v| v.correct).count(), total: verdicts.len() }
    }

    pub fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.passed as f64 / self.total as f64)
    }

    fn add(self, other: PassCount) -> PassCount {
        PassCount { passed: self.passed + other.passed, total: self.total + other.total }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qa: QAPair,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppliedUpdate {
    pub memory_supplements: Vec<String>,
    pub strategy_amendment: String,
    pub inserted: Vec<String>,
    pub deduplicated: usize,
    pub strategy_version: u32,
    pub adapter_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub records: Vec<QaRecord>,
    pub pass: PassCount,
    pub update: Option<AppliedUpdate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub removed: usize,
    pub inserted: Vec<String>,
    pub deduplicated: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionReport {
    pub dialogue_id: String,
    pub session_index: u32,
    pub constructed: Vec<String>,
    pub construction_deduplicated: usize,
    pub rounds: Vec<RoundReport>,
    pub qa_error: Option<String>,
    pub reconstruction: Option<ReconstructionReport>,
    /// Re-check of the last round's questions after its updates landed.
    pub follow_up: Option<Vec<QaRecord>>,
    pub pre: Option<PassCount>,
    pub post: Option<PassCount>,
}

impl SessionReport {
    fn new(dialogue_id: &str, session_index: u32) -> Self {
        SessionReport {
            dialogue_id: dialogue_id.to_owned(),
            session_index,
            constructed: Vec::new(),
            construction_deduplicated: 0,
            rounds: Vec::new(),
            qa_error: None,
            reconstruction: None,
            follow_up: None,
            pre: None,
            post: None,
        }
    }

    pub fn adapter_calls(&self) -> usize {
        self.rounds.iter().filter(|r| r.update.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueArtifacts {
    pub dialogue_id: String,
    pub store: MemoryStore,
    pub strategy: ExtractionStrategy,
    pub sessions: Vec<SessionReport>,
    pub error: Option<String>,
}

impl DialogueArtifacts {
    pub fn pre(&self) -> Option<PassCount> {
        self.sessions.iter().filter_map(|s| s.pre).reduce(PassCount::add)
    }

    pub fn post(&self) -> Option<PassCount> {
        self.sessions.iter().filter_map(|s| s.post).reduce(PassCount::add)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub dialogues: Vec<DialogueArtifacts>,
}

fn strip_marker(line: &str) -> &str {
    let line = line.trim().trim_start_matches(['-', '*', '\u{2022}']).trim_start();
    match line.split_once(['.', ')']) {
        Some((num, rest)) if !num.is_empty() && num.chars().all(|c| c.is_ascii_digit()) => rest.trim_start(),
        _ => line,
    }
}

fn strip_label<'a>(line: &'a str, labels: &[&str]) -> Option<&'a str> {
    let line = line.trim_start_matches('*');
    labels.iter().find_map(|label| {
        let head = line.get(..label.len())?;
        head.eq_ignore_ascii_case(label).then(|| line[label.len()..].trim_start_matches('*').trim())
    })
}

/// Parses `Q: ...` / `A: ...` lines; continuation lines extend the current field.
pub fn parse_qa_pairs(text: &str) -> Vec<(String, String)> {
    let mut pairs = Vec::new();
    let mut question: Option<String> = None;
    let mut answer: Option<String> = None;
    let flush = |q: &mut Option<String>, a: &mut Option<String>, pairs: &mut Vec<(String, String)>| {
        if let (Some(qv), Some(av)) = (q.take(), a.take()) {
            if !qv.is_empty() && !av.is_empty() {
                pairs.push((qv, av));
            }
        }
    };
    for raw in text.lines() {
        let line = strip_marker(raw);
        if line.is_empty() {
            continue;
        }
        if let Some(q) = strip_label(line, &["question:", "q:"]) {
            flush(&mut question, &mut answer, &mut pairs);
            question = Some(q.to_owned());
        } else if let Some(a) = strip_label(line, &["answer:", "a:"]) {
            if question.is_some() {
                answer = Some(a.to_owned());
            }
        } else if let Some(field) = answer.as_mut().or(question.as_mut()) {
            if !field.is_empty() {
                field.push(' ');
            }
            field.push_str(line);
        }
    }
    flush(&mut question, &mut answer, &mut pairs);
    pairs
}

/// Best token-F1 of `gold` against any window of the session of the same length.
pub fn best_window_f1(gold: &str, session: &str) -> f64 {
    let g = normalize_text(gold);
    let s = normalize_text(session);
    if g.is_empty() || s.is_empty() {
        return f1_score(gold, session);
    }
    let w = g.len().min(s.len());
    s.windows(w).map(|win| f1_score(&win.join(" "), &g.join(" "))).fold(0.0, f64::max)
}

pub fn generate_qa(
    session: &Session,
    source: &SessionRef,
    k: usize,
    guided: bool,
    gateway: &Gateway,
) -> Result<Vec<QAPair>, AmaError> {
    if k == 0 {
        return Ok(Vec::new());
    }
    let prompts = gateway.prompts();
    let (system, template) = if guided {
        (&prompts.challenger_guided_system, &prompts.challenger_guided_user)
    } else {
        (&prompts.challenger_unguided_system, &prompts.challenger_unguided_user)
    };
    let k_text = k.to_string();
    let text = session_text(session);
    let user = prompts.render(template, &[("k", &k_text), ("session", &text)]);
    let response = gateway.ask(RoleTag::Challenger, system.clone(), user)?;
    let mut pairs = parse_qa_pairs(&response);
    if pairs.is_empty() {
        return Err(AmaError::NoQuestions);
    }
    if pairs.len() < k {
        warn!(
            "{} session {}: challenger produced {} of {k} pairs",
            source.dialogue_id,
            source.session_index,
            pairs.len()
        );
    }
    pairs.truncate(k);
    Ok(pairs
        .into_iter()
        .map(|(question, gold_answer)| QAPair { question, gold_answer, source_session: source.clone() })
        .collect())
}

pub fn answer_with_memory(
    store: &MemoryStore,
    question: &str,
    retrieval_k: usize,
    gateway: &Gateway,
    embedder: &dyn Embedder,
) -> Result<String, AmaError> {
    let context = render_context(retrieve(store, question, retrieval_k, embedder)?);
    let prompts = gateway.prompts();
    let user = prompts.render(&prompts.answer_user, &[("memory", &context), ("question", question)]);
    Ok(gateway.ask(RoleTag::EvaluatorAnswer, prompts.answer_system.clone(), user)?.trim().to_owned())
}

fn parse_judgement(text: &str) -> Option<(bool, String)> {
    let trimmed = text.trim_start();
    let first = trimmed.lines().next()?;
    let token_start = first.trim_start_matches(|c: char| !c.is_ascii_alphabetic());
    let upper = token_start.to_ascii_uppercase();
    let (correct, len) = if upper.starts_with("INCORRECT") {
        (false, "INCORRECT".len())
    } else if upper.starts_with("CORRECT") {
        (true, "CORRECT".len())
    } else {
        return None;
    };
    if correct {
        return Some((true, String::new()));
    }
    let rest_of_first = token_start[len..].trim_start_matches(|c: char| !c.is_alphanumeric());
    let following: Vec<&str> = trimmed.lines().skip(1).map(str::trim).filter(|l| !l.is_empty()).collect();
    let mut defect = rest_of_first.trim().to_owned();
    for l in following {
        if !defect.is_empty() {
            defect.push(' ');
        }
        defect.push_str(l);
    }
    if defect.is_empty() {
        defect = "unspecified defect".into();
    }
    Some((false, defect))
}

pub fn judge_answer(question: &str, predicted: &str, gold: &str, gateway: &Gateway) -> Result<Verdict, AmaError> {
    let prompts = gateway.prompts();
    let user = prompts.render(
        &prompts.judge_user,
        &[("question", question), ("gold", gold), ("predicted", predicted)],
    );
    let response = gateway.ask(RoleTag::EvaluatorJudge, prompts.judge_system.clone(), user)?;
    Ok(match parse_judgement(&response) {
        Some((correct, defect)) => Verdict { predicted_answer: predicted.to_owned(), correct, defect },
        None => {
            let correct = f1_score(predicted, gold) >= FALLBACK_F1;
            warn!("judge verdict unparseable, using lexical fallback (correct={correct}): {response:?}");
            Verdict {
                predicted_answer: predicted.to_owned(),
                correct,
                defect: if correct { String::new() } else { FALLBACK_DEFECT.into() },
            }
        }
    })
}

fn render_failures(errors: &ErrorRecord) -> String {
    let mut out = String::new();
    for (i, (qa, v)) in errors.failures.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let _ = write!(
            out,
            "{}. QUESTION: {}\n   REFERENCE ANSWER: {}\n   PREDICTED ANSWER: {}\n   DEFECT: {}",
            i + 1,
            qa.question,
            qa.gold_answer,
            v.predicted_answer,
            v.defect
        );
    }
    out
}

fn is_none_reply(s: &str) -> bool {
    s.trim().trim_end_matches('.').eq_ignore_ascii_case("none")
}

fn parse_supplements(text: &str) -> Vec<String> {
    text.lines()
        .map(strip_marker)
        .filter(|l| !l.is_empty() && !is_none_reply(l))
        .map(str::to_owned)
        .collect()
}

fn parse_amendment(text: &str) -> String {
    let joined = text.lines().map(strip_marker).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    let joined = strip_label(&joined, &["guideline:"]).unwrap_or(&joined).to_owned();
    if is_none_reply(&joined) {
        String::new()
    } else {
        joined
    }
}

pub fn adapt(
    errors: &ErrorRecord,
    strategy: &ExtractionStrategy,
    config: &AmaConfig,
    gateway: &Gateway,
) -> Result<AdaptationResult, AmaError> {
    let mut result = AdaptationResult::default();
    if errors.failures.is_empty() {
        return Ok(result);
    }
    let prompts = gateway.prompts();
    let failures = render_failures(errors);
    if config.enable_content_update {
        let user = prompts.render(&prompts.adapter_content_user, &[("failures", &failures)]);
        let text = gateway.ask(RoleTag::AdapterContent, prompts.adapter_content_system.clone(), user)?;
        result.memory_supplements = parse_supplements(&text);
        if result.memory_supplements.is_empty() {
            warn!("adapter produced no usable supplements: {text:?}");
        }
    }
    if config.enable_strategy_update {
        let rendered = strategy.render(prompts);
        let user = prompts.render(&prompts.adapter_strategy_user, &[("strategy", &rendered), ("failures", &failures)]);
        let text = gateway.ask(RoleTag::AdapterStrategy, prompts.adapter_strategy_system.clone(), user)?;
        result.strategy_amendment = parse_amendment(&text);
        if result.strategy_amendment.is_empty() {
            debug!("adapter proposed no strategy change");
        }
    }
    Ok(result)
}

pub fn apply_strategy_update(strategy: &ExtractionStrategy, amendment: &str) -> ExtractionStrategy {
    let amendment = amendment.trim();
    if amendment.is_empty() || strategy.amendments.iter().any(|a| a.trim() == amendment) {
        return strategy.clone();
    }
    let mut next = strategy.clone();
    next.amendments.push(amendment.to_owned());
    next.version += 1;
    next
}

pub fn apply_memory_update(
    store: &mut MemoryStore,
    supplements: &[String],
    session: &Session,
    agents: Agents<'_>,
) -> Result<crate::memory::UpdateOutcome, AmaError> {
    let mut new_entries = Vec::with_capacity(supplements.len());
    for s in supplements.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
        new_entries.push(NewEntry {
            summary: s.to_owned(),
            keywords: frequency_keywords(s, 5),
            timestamp_label: session.date_label.clone(),
            source: EntrySource::AdapterSupplement {
                dialogue_id: store.dialogue_id.clone(),
                session_index: session.session_index,
            },
            embedding: agents.embedder.embed(s).map_err(MemoryError::from)?,
            provenance: Provenance::AdapterSupplement,
        });
    }
    Ok(update_store(store, new_entries, agents.store_config)?)
}

/// Answers and judges each question; call failures become incorrect verdicts.
fn evaluate(qas: &[QAPair], store: &MemoryStore, config: &AmaConfig, agents: Agents<'_>) -> Vec<QaRecord> {
    qas.iter()
        .map(|qa| {
            let verdict = match answer_with_memory(store, &qa.question, config.retrieval_k, agents.gateway, agents.embedder)
            {
                Err(e) => {
                    warn!("answering {:?} failed: {e}", qa.question);
                    Verdict::gateway_error(String::new())
                }
                Ok(predicted) => match judge_answer(&qa.question, &predicted, &qa.gold_answer, agents.gateway) {
                    Ok(v) => v,
                    Err(e) => {
                        warn!("judging {:?} failed: {e}", qa.question);
                        Verdict::gateway_error(predicted)
                    }
                },
            };
            QaRecord { qa: qa.clone(), verdict }
        })
        .collect()
}

fn audit(qas: &[QAPair], session: &Session) {
    let text = session_text(session);
    for qa in qas {
        let score = best_window_f1(&qa.gold_answer, &text);
        if score < AUDIT_F1 {
            info!("audit: gold answer {:?} overlaps the session weakly (best window F1 {score:.3})", qa.gold_answer);
        }
    }
}

fn reconstruct(
    session: &Session,
    store: &mut MemoryStore,
    strategy: &ExtractionStrategy,
    agents: Agents<'_>,
) -> Result<ReconstructionReport, AmaError> {
    let dialogue_id = store.dialogue_id.clone();
    let removed = store.remove_constructed(&dialogue_id, session.session_index);
    let drafts =
        construct_session_memory(&dialogue_id, session, strategy, agents.gateway, agents.embedder, agents.store_config)?;
    let outcome = update_store(store, drafts, agents.store_config)?;
    Ok(ReconstructionReport { removed, inserted: outcome.inserted, deduplicated: outcome.deduplicated.len() })
}

/// One session of the loop: probe, answer, judge, adapt, for up to
/// `max_rounds` rounds, stopping early once every probe passes.
pub fn run_session(
    session: &Session,
    mut store: MemoryStore,
    mut strategy: ExtractionStrategy,
    config: &AmaConfig,
    agents: Agents<'_>,
) -> (MemoryStore, ExtractionStrategy, SessionReport) {
    let source = SessionRef { dialogue_id: store.dialogue_id.clone(), session_index: session.session_index };
    let mut report = SessionReport::new(&source.dialogue_id, source.session_index);

    for round in 1..=config.max_rounds {
        let qas = match generate_qa(session, &source, config.qa_per_session, config.guided_questions, agents.gateway) {
            Ok(qas) => qas,
            Err(e) => {
                warn!("{} session {}: question generation failed: {e}", source.dialogue_id, source.session_index);
                report.qa_error = Some(e.to_string());
                break;
            }
        };
        if qas.is_empty() {
            break;
        }
        if config.audit_gold_answers {
            audit(&qas, session);
        }
        let records = evaluate(&qas, &store, config, agents);
        let verdicts: Vec<Verdict> = records.iter().map(|r| r.verdict.clone()).collect();
        let pass = PassCount::of(&verdicts);
        let failures: Vec<(QAPair, Verdict)> =
            records.iter().filter(|r| !r.verdict.correct).map(|r| (r.qa.clone(), r.verdict.clone())).collect();
        info!(
            "{} session {} round {round}: {}/{} passed",
            source.dialogue_id, source.session_index, pass.passed, pass.total
        );
        let mut round_report = RoundReport { round, records, pass, update: None };
        if failures.is_empty() {
            report.rounds.push(round_report);
            break;
        }

        let errors = ErrorRecord { failures, session_ref: source.clone() };
        let mut update = AppliedUpdate {
            memory_supplements: Vec::new(),
            strategy_amendment: String::new(),
            inserted: Vec::new(),
            deduplicated: 0,
            strategy_version: strategy.version,
            adapter_error: None,
        };
        match adapt(&errors, &strategy, config, agents.gateway) {
            Ok(result) => {
                strategy = apply_strategy_update(&strategy, &result.strategy_amendment);
                match apply_memory_update(&mut store, &result.memory_supplements, session, agents) {
                    Ok(outcome) => {
                        update.inserted = outcome.inserted;
                        update.deduplicated = outcome.deduplicated.len();
                    }
                    Err(e) => update.adapter_error = Some(e.to_string()),
                }
                update.memory_supplements = result.memory_supplements;
                update.strategy_amendment = result.strategy_amendment;
                update.strategy_version = strategy.version;
            }
            Err(e) => {
                warn!("{} session {}: adapter failed: {e}", source.dialogue_id, source.session_index);
                update.adapter_error = Some(e.to_string());
            }
        }
        round_report.update = Some(update);
        report.rounds.push(round_report);
    }

    let Some(last) = report.rounds.last() else {
        return (store, strategy, report);
    };
    let last_rate = last.pass.rate().unwrap_or(1.0);
    let mut changed = last.update.as_ref().is_some_and(|u| u.adapter_error.is_none());
    if config.reconstruction_pass_threshold > 0.0 && last_rate < config.reconstruction_pass_threshold {
        match reconstruct(session, &mut store, &strategy, agents) {
            Ok(r) => {
                info!(
                    "{} session {}: reconstructed ({} removed, {} inserted)",
                    source.dialogue_id,
                    source.session_index,
                    r.removed,
                    r.inserted.len()
                );
                report.reconstruction = Some(r);
                changed = true;
            }
            Err(e) => warn!("{} session {}: reconstruction failed: {e}", source.dialogue_id, source.session_index),
        }
    }
    report.pre = Some(report.rounds[0].pass);
    let last = report.rounds.last().expect("at least one round");
    report.post = Some(last.pass);
    if changed {
        let qas: Vec<QAPair> = last.records.iter().map(|r| r.qa.clone()).collect();
        let follow_up = evaluate(&qas, &store, config, agents);
        let verdicts: Vec<Verdict> = follow_up.iter().map(|r| r.verdict.clone()).collect();
        report.post = Some(PassCount::of(&verdicts));
        report.follow_up = Some(follow_up);
    }
    (store, strategy, report)
}

/// Builds memory for one dialogue session by session, adapting after each.
pub fn run_dialogue(
    dialogue: &Dialogue,
    strategy: ExtractionStrategy,
    config: &AmaConfig,
    agents: Agents<'_>,
) -> DialogueArtifacts {
    let mut store = MemoryStore::new(dialogue.dialogue_id.clone());
    let mut strategy = strategy;
    let mut sessions = Vec::with_capacity(dialogue.sessions.len());
    let mut error = None;
    for session in &dialogue.sessions {
        let built = construct_session_memory(
            &dialogue.dialogue_id,
            session,
            &strategy,
            agents.gateway,
            agents.embedder,
            agents.store_config,
        )
        .and_then(|drafts| update_store(&mut store, drafts, agents.store_config));
        let outcome = match built {
            Ok(o) => o,
            Err(e) => {
                warn!("{} session {}: construction failed: {e}", dialogue.dialogue_id, session.session_index);
                error = Some(format!("session {}: {e}", session.session_index));
                break;
            }
        };
        let (s, st, mut report) = run_session(session, store, strategy, config, agents);
        report.constructed = outcome.inserted;
        report.construction_deduplicated = outcome.deduplicated.len();
        store = s;
        strategy = st;
        sessions.push(report);
    }
    DialogueArtifacts { dialogue_id: dialogue.dialogue_id.clone(), store, strategy, sessions, error }
}

/// Runs every dialogue with its own fresh store. Dialogues are independent,
/// so they run on up to `parallelism` threads; results keep corpus order.
/// In shared-strategy mode they run in order with the strategy carried over.
pub fn run_corpus(
    corpus: &Corpus,
    config: &AmaConfig,
    agents: Agents<'_>,
    parallelism: usize,
) -> Result<RunArtifacts, AmaError> {
    config.validate()?;
    let base = ExtractionStrategy::new(agents.gateway.prompts().base_strategy.clone());
    if config.shared_strategy {
        let mut strategy = base;
        let mut dialogues = Vec::with_capacity(corpus.dialogues.len());
        for d in &corpus.dialogues {
            let artifacts = run_dialogue(d, strategy, config, agents);
            strategy = artifacts.strategy.clone();
            dialogues.push(artifacts);
        }
        return Ok(RunArtifacts { dialogues });
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| AmaError::Config(format!("thread pool: {e}")))?;
    let dialogues =
        pool.install(|| corpus.dialogues.par_iter().map(|d| run_dialogue(d, base.clone(), config, agents)).collect());
    Ok(RunArtifacts { dialogues })
}
