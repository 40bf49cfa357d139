//! Answering benchmark questions from adapted stores and scoring them.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ama::{answer_with_memory, AmaError, RunArtifacts};
use crate::dialogue::{Category, Corpus};
use crate::embedding::Embedder;
use crate::llm::Gateway;
use crate::metrics::{build_report, llm_judge, MetricReport, ScoredRow};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub dialogue_id: String,
    pub question: String,
    pub gold_answer: String,
    pub category: Category,
    pub predicted: String,
    pub judge: Option<u8>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub report: MetricReport,
    pub answers: Vec<AnswerRecord>,
    pub answer_failures: usize,
    pub judge_failures: usize,
    pub skipped_dialogues: Vec<String>,
}

/// Answers every benchmark question of every dialogue that has a store, on up
/// to `parallelism` threads; output order follows the corpus.
pub fn evaluate_run(
    corpus: &Corpus,
    artifacts: &RunArtifacts,
    retrieval_k: usize,
    judge: bool,
    gateway: &Gateway,
    embedder: &dyn Embedder,
    parallelism: usize,
) -> Result<EvalOutput, AmaError> {
    let mut jobs = Vec::new();
    let mut skipped = Vec::new();
    for (dialogue_id, questions) in &corpus.questions {
        match artifacts.dialogues.iter().find(|d| &d.dialogue_id == dialogue_id) {
            Some(d) => jobs.extend(questions.iter().map(|q| (&d.store, dialogue_id, q))),
            None => {
                warn!("no store for dialogue {dialogue_id}; skipping its {} questions", questions.len());
                skipped.push(dialogue_id.clone());
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| AmaError::Config(format!("thread pool: {e}")))?;
    let answers: Vec<AnswerRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|(store, dialogue_id, q)| {
                let mut record = AnswerRecord {
                    dialogue_id: (*dialogue_id).clone(),
                    question: q.question.clone(),
                    gold_answer: q.gold_answer.clone(),
                    category: q.category,
                    predicted: String::new(),
                    judge: None,
                    error: None,
                };
                match answer_with_memory(store, &q.question, retrieval_k, gateway, embedder) {
                    Ok(p) => record.predicted = p,
                    Err(e) => {
                        warn!("{dialogue_id}: answering {:?} failed: {e}", q.question);
                        record.error = Some(e.to_string());
                        return record;
                    }
                }
                if judge {
                    match llm_judge(&q.question, &q.gold_answer, &record.predicted, gateway) {
                        Ok(score) => record.judge = Some(score),
                        Err(e) => warn!("{dialogue_id}: judge unavailable for {:?}: {e}", q.question),
                    }
                }
                record
            })
            .collect()
    });
    let answer_failures = answers.iter().filter(|a| a.error.is_some()).count();
    let judge_failures = if judge { answers.iter().filter(|a| a.error.is_none() && a.judge.is_none()).count() } else { 0 };
    let rows: Vec<ScoredRow> = answers
        .iter()
        .map(|a| ScoredRow { category: a.category, gold: a.gold_answer.clone(), predicted: a.predicted.clone(), judge: a.judge })
        .collect();
    Ok(EvalOutput { report: build_report(&rows, None), answers, answer_failures, judge_failures, skipped_dialogues: skipped })
}
