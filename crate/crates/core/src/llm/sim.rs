//! A rule-based stand-in for the model, driven by a per-corpus fact sheet.
//!
//! It recognizes each role's prompt by the bundled templates and answers from
//! the script: the summarizer emits the scripted memory lines (plus the
//! hidden ones once the strategy carries amendments), the answerer replies
//! only when a probe's evidence string is present in the memory it was shown,
//! and the adapter returns the scripted supplements. Replay fixtures are
//! recorded by running the real pipeline against it.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, ChatRequest, LlmError, RoleTag};
use crate::ama::REFUSAL;
use crate::dialogue::{session_text, Corpus};
use crate::prompts::PromptSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub question: String,
    pub answer: String,
    /// Substring the memory context must contain for the question to be answered.
    pub evidence: String,
    /// Answer text when answerable; defaults to `answer`.
    #[serde(default)]
    pub response: Option<String>,
    /// Fact the adapter offers when this probe fails.
    #[serde(default)]
    pub supplement: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionScript {
    pub dialogue_id: String,
    pub session_index: u32,
    pub memory: Vec<String>,
    /// Lines only extracted once the strategy has been amended.
    #[serde(default)]
    pub hidden_memory: Vec<String>,
    pub probes: Vec<Probe>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedAnswer {
    pub question: String,
    pub response: String,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimScript {
    #[serde(default)]
    pub improve_instruction: Option<String>,
    pub sessions: Vec<SessionScript>,
    /// Answers to benchmark questions that are not probes.
    #[serde(default)]
    pub answers: Vec<ScriptedAnswer>,
}

pub struct SimModel {
    script: SimScript,
    amendments_header: String,
    by_text: Vec<(String, usize)>,
    answers: HashMap<String, (String, String)>,
    supplements: HashMap<String, String>,
}

impl SimModel {
    pub fn new(corpus: &Corpus, script: SimScript, prompts: &PromptSet) -> Result<Self, LlmError> {
        let mut by_text = Vec::new();
        for (i, s) in script.sessions.iter().enumerate() {
            let session = corpus
                .dialogue(&s.dialogue_id)
                .and_then(|d| d.sessions.iter().find(|x| x.session_index == s.session_index))
                .ok_or_else(|| {
                    LlmError::Config(format!("script names unknown session {} #{}", s.dialogue_id, s.session_index))
                })?;
            by_text.push((session_text(session), i));
        }
        let mut answers = HashMap::new();
        let mut supplements = HashMap::new();
        for p in script.sessions.iter().flat_map(|s| &s.probes) {
            let response = p.response.clone().unwrap_or_else(|| p.answer.clone());
            answers.insert(p.question.clone(), (response, p.evidence.clone()));
            if let Some(s) = &p.supplement {
                supplements.insert(p.question.clone(), s.clone());
            }
        }
        for a in &script.answers {
            answers.insert(a.question.clone(), (a.response.clone(), a.evidence.clone()));
        }
        Ok(SimModel { script, amendments_header: prompts.strategy_amendments_header.clone(), by_text, answers, supplements })
    }

    pub fn from_files(corpus: &Corpus, script_path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(script_path)
            .map_err(|e| LlmError::Config(format!("{}: {e}", script_path.display())))?;
        let script = serde_json::from_str(&text)
            .map_err(|e| LlmError::Config(format!("{}: {e}", script_path.display())))?;
        Self::new(corpus, script, &PromptSet::default())
    }

    fn session_for(&self, prompt: &str, exact: bool) -> Result<&SessionScript, LlmError> {
        self.by_text
            .iter()
            .find(|(text, _)| if exact { prompt == text } else { prompt.ends_with(text.as_str()) })
            .map(|(_, i)| &self.script.sessions[*i])
            .ok_or_else(|| LlmError::Backend("sim: prompt matches no scripted session".into()))
    }

    fn summarize(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let s = self.session_for(&req.user_prompt, true)?;
        let mut lines = s.memory.clone();
        if req.system_prompt.contains(&self.amendments_header) {
            lines.extend(s.hidden_memory.iter().cloned());
        }
        Ok(lines.join("\n"))
    }

    fn challenge(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let s = self.session_for(&req.user_prompt, false)?;
        let k: usize = req
            .user_prompt
            .split(|c: char| !c.is_ascii_digit())
            .find(|t| !t.is_empty())
            .and_then(|t| t.parse().ok())
            .unwrap_or(s.probes.len());
        Ok(s.probes
            .iter()
            .cycle()
            .take(k.min(s.probes.len() * 64))
            .map(|p| format!("Q: {}\nA: {}", p.question, p.answer))
            .collect::<Vec<_>>()
            .join("\n\n"))
    }

    fn answer(&self, req: &ChatRequest) -> String {
        let (memory, question) = req.user_prompt.rsplit_once("\n\nQUESTION: ").unwrap_or(("", ""));
        let memory = memory.to_lowercase();
        match self.answers.get(question.trim()) {
            Some((response, evidence)) if memory.contains(&evidence.to_lowercase()) => response.clone(),
            _ => REFUSAL.to_owned(),
        }
    }

    fn field<'p>(prompt: &'p str, label: &str) -> &'p str {
        prompt.lines().find_map(|l| l.trim().strip_prefix(label)).map(str::trim).unwrap_or("")
    }

    fn judge(&self, req: &ChatRequest) -> String {
        if Self::field(&req.user_prompt, "PREDICTED ANSWER:") == REFUSAL {
            "INCORRECT\nMissing information: the memory holds no record of the fact this question asks about.".into()
        } else {
            "CORRECT".into()
        }
    }

    fn supplement(&self, req: &ChatRequest) -> String {
        let facts: Vec<&str> = req
            .user_prompt
            .lines()
            .filter_map(|l| l.split_once("QUESTION: ").map(|(_, q)| q.trim()))
            .filter_map(|q| self.supplements.get(q).map(String::as_str))
            .collect();
        let mut unique: Vec<&str> = Vec::new();
        for f in facts {
            if !unique.contains(&f) {
                unique.push(f);
            }
        }
        if unique.is_empty() {
            "NONE".into()
        } else {
            unique.join("\n")
        }
    }
}

impl ChatBackend for SimModel {
    fn id(&self) -> &str {
        "sim"
    }

    fn complete(&self, req: &ChatRequest, _digest: &str) -> Result<String, LlmError> {
        match req.role_tag {
            RoleTag::MemorySummarizer => self.summarize(req),
            RoleTag::Challenger => self.challenge(req),
            RoleTag::EvaluatorAnswer => Ok(self.answer(req)),
            RoleTag::EvaluatorJudge => Ok(self.judge(req)),
            RoleTag::AdapterContent => Ok(self.supplement(req)),
            RoleTag::AdapterStrategy => Ok(self.script.improve_instruction.clone().unwrap_or_else(|| "NONE".into())),
            RoleTag::LlmJudge => {
                Ok(if Self::field(&req.user_prompt, "PREDICTED ANSWER:") == REFUSAL { "0" } else { "1" }.into())
            }
        }
    }
}
