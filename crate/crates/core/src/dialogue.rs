//! Multi-session dialogues, benchmark questions, and the two corpus formats:
//! the native single-document JSON and the LoCoMo release schema.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: String,
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_index: u32,
    pub date_label: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub dialogue_id: String,
    pub sessions: Vec<Session>,
}

/// Question categories, in the order the benchmark reports them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    MultiHop,
    Temporal,
    OpenDomain,
    SingleHop,
    #[serde(other)]
    Other,
}

impl Category {
    pub const REPORT_ORDER: [Category; 4] =
        [Category::MultiHop, Category::Temporal, Category::OpenDomain, Category::SingleHop];

    /// LoCoMo numeric category codes.
    pub fn from_locomo_code(code: i64) -> Self {
        match code {
            1 => Category::MultiHop,
            2 => Category::Temporal,
            3 => Category::OpenDomain,
            4 => Category::SingleHop,
            _ => Category::Other,
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        Some(match label {
            "multi_hop" => Category::MultiHop,
            "temporal" => Category::Temporal,
            "open_domain" => Category::OpenDomain,
            "single_hop" => Category::SingleHop,
            "other" => Category::Other,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::MultiHop => "multi_hop",
            Category::Temporal => "temporal",
            Category::OpenDomain => "open_domain",
            Category::SingleHop => "single_hop",
            Category::Other => "other",
        }
    }

    pub fn column_label(&self) -> &'static str {
        match self {
            Category::MultiHop => "Multi-Hop",
            Category::Temporal => "Temporal",
            Category::OpenDomain => "Open-Domain",
            Category::SingleHop => "Single-Hop",
            Category::Other => "Other",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkQuestion {
    pub question: String,
    pub gold_answer: String,
    pub category: Category,
    #[serde(default)]
    pub evidence_ids: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub questions: BTreeMap<String, Vec<BenchmarkQuestion>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Locomo,
    Native,
}

impl std::str::FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "locomo" => Ok(CorpusFormat::Locomo),
            "native" => Ok(CorpusFormat::Native),
            other => Err(format!("unknown corpus format `{other}` (expected locomo or native)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("JSON parse error at byte {offset} (line {line}, column {column}): {message}")]
    Parse {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dialogue {dialogue_index}: missing required key `{key}`")]
    MissingKey { dialogue_index: usize, key: String },
    #[error("dialogue {dialogue_index}: {message}")]
    Invalid { dialogue_index: usize, message: String },
    #[error("{0}")]
    Corpus(String),
}

/// Per-category question totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts(pub BTreeMap<Category, usize>);

impl CategoryCounts {
    pub fn get(&self, c: Category) -> usize {
        self.0.get(&c).copied().unwrap_or(0)
    }

    pub fn total(&self) -> usize {
        self.0.values().sum()
    }
}

/// The four reported categories on one line; uncategorized questions (such
/// as LoCoMo's adversarial code 5) go on a second `other=N` line when present.
impl fmt::Display for CategoryCounts {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Category::REPORT_ORDER
            .iter()
            .map(|c| format!("{}={}", c, self.get(*c)))
            .collect();
        f.write_str(&parts.join(" "))?;
        if self.get(Category::Other) > 0 {
            write!(f, "\nother={}", self.get(Category::Other))?;
        }
        Ok(())
    }
}

impl Corpus {
    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.dialogue_id == id)
    }

    pub fn question_count(&self) -> usize {
        self.questions.values().map(Vec::len).sum()
    }

    pub fn category_counts(&self) -> CategoryCounts {
        let mut counts = BTreeMap::new();
        for q in self.questions.values().flatten() {
            *counts.entry(q.category).or_insert(0) += 1;
        }
        CategoryCounts(counts)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut ids = HashSet::new();
        for (idx, d) in self.dialogues.iter().enumerate() {
            let invalid = |message: String| CorpusError::Invalid { dialogue_index: idx, message };
            if !ids.insert(d.dialogue_id.as_str()) {
                return Err(invalid(format!("duplicate dialogue_id `{}`", d.dialogue_id)));
            }
            if d.sessions.is_empty() {
                return Err(invalid("dialogue has no sessions".into()));
            }
            let mut prev = 0;
            for s in &d.sessions {
                if s.session_index == 0 || s.session_index <= prev {
                    return Err(invalid(format!(
                        "session_index {} is not strictly increasing from 1",
                        s.session_index
                    )));
                }
                prev = s.session_index;
                let mut turn_ids = HashSet::new();
                for t in &s.turns {
                    if t.speaker.is_empty() {
                        return Err(invalid(format!("turn `{}` has an empty speaker", t.turn_id)));
                    }
                    if !turn_ids.insert(t.turn_id.as_str()) {
                        return Err(invalid(format!(
                            "duplicate turn_id `{}` in session {}",
                            t.turn_id, s.session_index
                        )));
                    }
                }
            }
        }
        for (key, qs) in &self.questions {
            if !ids.contains(key.as_str()) {
                return Err(CorpusError::Corpus(format!(
                    "questions reference unknown dialogue_id `{key}`"
                )));
            }
            if let Some(q) = qs.iter().find(|q| q.question.is_empty() || q.gold_answer.is_empty()) {
                return Err(CorpusError::Corpus(format!(
                    "dialogue `{key}` has a question with empty text or answer: {:?}",
                    q.question
                )));
            }
        }
        Ok(())
    }
}

/// Renders a session as the text fed to the challenger and the constructor.
pub fn session_text(session: &Session) -> String {
    let mut lines = Vec::with_capacity(session.turns.len() + 1);
    if !session.date_label.is_empty() {
        lines.push(format!("DATE: {}", session.date_label));
    }
    for t in &session.turns {
        lines.push(format!("{}: {}", t.speaker, t.text));
    }
    lines.join("\n")
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text, format)
}

pub fn parse_corpus(text: &str, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let value: Value = serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
    let corpus = match format {
        CorpusFormat::Native => native_from_value(&value)?,
        CorpusFormat::Locomo => locomo_from_value(&value)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

fn parse_error(text: &str, err: &serde_json::Error) -> CorpusError {
    let (line, column) = (err.line(), err.column());
    let offset = text
        .split_inclusive('\n')
        .take(line.saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + column.saturating_sub(1);
    CorpusError::Parse { offset, line, column, message: err.to_string() }
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    dialogue_index: usize,
}

impl<'a> Fields<'a> {
    fn of(v: &'a Value, dialogue_index: usize, what: &str) -> Result<Self, CorpusError> {
        v.as_object()
            .map(|obj| Fields { obj, dialogue_index })
            .ok_or_else(|| CorpusError::Invalid {
                dialogue_index,
                message: format!("{what} is not a JSON object"),
            })
    }

    fn get(&self, key: &str) -> Result<&'a Value, CorpusError> {
        self.obj.get(key).ok_or_else(|| CorpusError::MissingKey {
            dialogue_index: self.dialogue_index,
            key: key.to_owned(),
        })
    }

    fn invalid(&self, message: String) -> CorpusError {
        CorpusError::Invalid { dialogue_index: self.dialogue_index, message }
    }

    fn string(&self, key: &str) -> Result<String, CorpusError> {
        match self.get(key)? {
            Value::String(s) => Ok(s.clone()),
            other => Err(self.invalid(format!("`{key}` must be a string, got {other}"))),
        }
    }

    /// Strings, or numbers rendered as text (LoCoMo stores some answers as integers).
    fn text(&self, key: &str) -> Result<String, CorpusError> {
        match self.get(key)? {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            other => Err(self.invalid(format!("`{key}` must be text, got {other}"))),
        }
    }

    fn array(&self, key: &str) -> Result<&'a Vec<Value>, CorpusError> {
        self.get(key)?
            .as_array()
            .ok_or_else(|| self.invalid(format!("`{key}` must be an array")))
    }

    fn uint(&self, key: &str) -> Result<u64, CorpusError> {
        self.get(key)?
            .as_u64()
            .ok_or_else(|| self.invalid(format!("`{key}` must be a non-negative integer")))
    }

    fn string_list(&self, key: &str) -> Result<Vec<String>, CorpusError> {
        match self.obj.get(key) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::Array(items)) => Ok(items
                .iter()
                .map(|v| v.as_str().map(str::to_owned).unwrap_or_else(|| v.to_string()))
                .collect()),
            Some(other) => Err(self.invalid(format!("`{key}` must be a list, got {other}"))),
        }
    }
}

fn native_from_value(value: &Value) -> Result<Corpus, CorpusError> {
    let root = value
        .as_object()
        .ok_or_else(|| CorpusError::Corpus("native corpus must be a JSON object".into()))?;
    let dialogues_v = root
        .get("dialogues")
        .and_then(Value::as_array)
        .ok_or_else(|| CorpusError::Corpus("missing required key `dialogues`".into()))?;
    let mut dialogues = Vec::with_capacity(dialogues_v.len());
    for (idx, dv) in dialogues_v.iter().enumerate() {
        let d = Fields::of(dv, idx, "dialogue")?;
        let mut sessions = Vec::new();
        for sv in d.array("sessions")? {
            let s = Fields::of(sv, idx, "session")?;
            let mut turns = Vec::new();
            for tv in s.array("turns")? {
                let t = Fields::of(tv, idx, "turn")?;
                turns.push(Turn {
                    turn_id: t.string("turn_id")?,
                    speaker: t.string("speaker")?,
                    text: t.string("text")?,
                });
            }
            let index = s.uint("session_index")?;
            sessions.push(Session {
                session_index: u32::try_from(index)
                    .map_err(|_| s.invalid(format!("session_index {index} out of range")))?,
                date_label: s.string("date_label")?,
                turns,
            });
        }
        dialogues.push(Dialogue { dialogue_id: d.string("dialogue_id")?, sessions });
    }

    let mut questions = BTreeMap::new();
    if let Some(qv) = root.get("questions") {
        let qmap = qv
            .as_object()
            .ok_or_else(|| CorpusError::Corpus("`questions` must be an object".into()))?;
        for (dialogue_id, list) in qmap {
            let idx = dialogues
                .iter()
                .position(|d| &d.dialogue_id == dialogue_id)
                .ok_or_else(|| {
                    CorpusError::Corpus(format!("questions reference unknown dialogue_id `{dialogue_id}`"))
                })?;
            let items = list.as_array().ok_or_else(|| CorpusError::Invalid {
                dialogue_index: idx,
                message: "question list must be an array".into(),
            })?;
            let mut parsed = Vec::with_capacity(items.len());
            for item in items {
                let q = Fields::of(item, idx, "question")?;
                let label = q.string("category")?;
                let category = Category::from_label(&label).unwrap_or_else(|| {
                    warn!("dialogue {dialogue_id}: unknown category `{label}` mapped to other");
                    Category::Other
                });
                parsed.push(BenchmarkQuestion {
                    question: q.string("question")?,
                    gold_answer: q.text("gold_answer")?,
                    category,
                    evidence_ids: q.string_list("evidence_ids")?,
                });
            }
            questions.insert(dialogue_id.clone(), parsed);
        }
    }
    Ok(Corpus { dialogues, questions })
}

fn locomo_from_value(value: &Value) -> Result<Corpus, CorpusError> {
    let samples = value
        .as_array()
        .ok_or_else(|| CorpusError::Corpus("LoCoMo file must be a JSON array of samples".into()))?;
    let mut corpus = Corpus::default();
    let mut code_counts: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, sv) in samples.iter().enumerate() {
        let sample = Fields::of(sv, idx, "sample")?;
        let dialogue_id = match sample.obj.get("sample_id") {
            Some(Value::String(s)) => s.clone(),
            _ => format!("conv-{idx}"),
        };
        let conv = Fields::of(sample.get("conversation")?, idx, "conversation")?;

        let mut numbered: Vec<(u32, &Vec<Value>)> = conv
            .obj
            .iter()
            .filter_map(|(k, v)| {
                let n = k.strip_prefix("session_")?.parse::<u32>().ok()?;
                Some((n, v.as_array()?))
            })
            .collect();
        numbered.sort_by_key(|(n, _)| *n);

        let mut sessions = Vec::with_capacity(numbered.len());
        for (n, turns_v) in numbered {
            let date_label = match conv.obj.get(&format!("session_{n}_date_time")) {
                Some(Value::String(s)) => s.clone(),
                _ => String::new(),
            };
            let mut turns = Vec::with_capacity(turns_v.len());
            for (ti, tv) in turns_v.iter().enumerate() {
                let t = Fields::of(tv, idx, "turn")?;
                let turn_id = match t.obj.get("dia_id") {
                    Some(Value::String(s)) => s.clone(),
                    _ => format!("D{n}:{}", ti + 1),
                };
                turns.push(Turn { turn_id, speaker: t.string("speaker")?, text: t.string("text")? });
            }
            sessions.push(Session { session_index: n, date_label, turns });
        }

        let mut questions = Vec::new();
        if let Some(Value::Array(qa)) = sample.obj.get("qa") {
            for item in qa {
                let q = Fields::of(item, idx, "qa item")?;
                let code = q.get("category")?;
                let category = match code.as_i64() {
                    Some(c) => Category::from_locomo_code(c),
                    None => Category::Other,
                };
                *code_counts.entry(code.to_string()).or_insert(0) += 1;
                if category == Category::Other {
                    warn!("dialogue {dialogue_id}: category code {code} mapped to other");
                }
                // Adversarial items carry their answer under a different key.
                let gold_answer = match q.text("answer") {
                    Ok(a) => a,
                    Err(CorpusError::MissingKey { .. }) if q.obj.contains_key("adversarial_answer") => {
                        q.text("adversarial_answer")?
                    }
                    Err(e) => return Err(e),
                };
                questions.push(BenchmarkQuestion {
                    question: q.string("question")?,
                    gold_answer,
                    category,
                    evidence_ids: q.string_list("evidence")?,
                });
            }
        }
        if !questions.is_empty() {
            corpus.questions.insert(dialogue_id.clone(), questions);
        }
        corpus.dialogues.push(Dialogue { dialogue_id, sessions });
    }
    for (code, n) in &code_counts {
        info!("LoCoMo category code {code}: {n} questions");
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(id: &str, speaker: &str, text: &str) -> Turn {
        Turn { turn_id: id.into(), speaker: speaker.into(), text: text.into() }
    }

    #[test]
    fn session_text_rendering() {
        let empty = Session { session_index: 1, date_label: String::new(), turns: vec![] };
        assert_eq!(session_text(&empty), "");
        let one = Session {
            session_index: 1,
            date_label: "8 May".into(),
            turns: vec![turn("t1", "Jon", "Hey Gina!")],
        };
        assert_eq!(session_text(&one), "DATE: 8 May\nJon: Hey Gina!");
        let undated = Session { date_label: String::new(), ..one };
        assert_eq!(session_text(&undated), "Jon: Hey Gina!");
    }

    #[test]
    fn empty_native_corpus() {
        let c = parse_corpus(r#"{"dialogues": [], "questions": {}}"#, CorpusFormat::Native).unwrap();
        assert!(c.dialogues.is_empty());
        assert_eq!(c.question_count(), 0);
    }

    #[test]
    fn empty_locomo_corpus() {
        let c = parse_corpus("[]", CorpusFormat::Locomo).unwrap();
        assert!(c.dialogues.is_empty());
    }

    #[test]
    fn parse_error_reports_byte_offset() {
        let text = "{\n  \"dialogues\": [,]\n}";
        match parse_corpus(text, CorpusFormat::Native) {
            Err(CorpusError::Parse { offset, line, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(&text[offset..offset + 1], ",");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_key_names_key_and_dialogue() {
        let text = r#"{"dialogues": [
            {"dialogue_id": "a", "sessions": [{"session_index": 1, "date_label": "", "turns": []}]},
            {"dialogue_id": "b", "sessions": [{"session_index": 1, "turns": []}]}
        ]}"#;
        match parse_corpus(text, CorpusFormat::Native) {
            Err(CorpusError::MissingKey { dialogue_index, key }) => {
                assert_eq!(dialogue_index, 1);
                assert_eq!(key, "date_label");
            }
            other => panic!("expected missing key, got {other:?}"),
        }
    }

    #[test]
    fn rejects_non_increasing_sessions() {
        let text = r#"{"dialogues": [{"dialogue_id": "a", "sessions": [
            {"session_index": 2, "date_label": "", "turns": []},
            {"session_index": 2, "date_label": "", "turns": []}]}]}"#;
        assert!(matches!(parse_corpus(text, CorpusFormat::Native), Err(CorpusError::Invalid { .. })));
    }

    #[test]
    fn rejects_questions_for_unknown_dialogue() {
        let text = r#"{"dialogues": [], "questions": {"ghost": []}}"#;
        assert!(matches!(parse_corpus(text, CorpusFormat::Native), Err(CorpusError::Corpus(_))));
    }

    #[test]
    fn unknown_native_category_maps_to_other() {
        let text = r#"{"dialogues": [{"dialogue_id": "a", "sessions": [
            {"session_index": 1, "date_label": "", "turns": []}]}],
            "questions": {"a": [{"question": "q?", "gold_answer": "x", "category": "adversarial", "evidence_ids": []}]}}"#;
        let c = parse_corpus(text, CorpusFormat::Native).unwrap();
        assert_eq!(c.questions["a"][0].category, Category::Other);
    }

    #[test]
    fn locomo_adapter_orders_sessions_and_maps_codes() {
        let text = r#"[{
            "sample_id": "conv-26",
            "conversation": {
                "speaker_a": "Jon", "speaker_b": "Gina",
                "session_2_date_time": "2 pm", "session_10_date_time": "3 pm",
                "session_2": [{"speaker": "Jon", "dia_id": "D2:1", "text": "second"}],
                "session_10": [{"speaker": "Gina", "dia_id": "D10:1", "text": "tenth", "blip_caption": "a photo"}],
                "session_1_date_time": "1 pm",
                "session_1": [{"speaker": "Jon", "dia_id": "D1:1", "text": "first"}]
            },
            "qa": [
                {"question": "a?", "answer": "x", "evidence": ["D1:1"], "category": 1},
                {"question": "b?", "answer": 2022, "evidence": [], "category": 2},
                {"question": "c?", "answer": "z", "category": 3},
                {"question": "d?", "answer": "w", "category": 4},
                {"question": "e?", "adversarial_answer": "v", "category": 5}
            ]
        }]"#;
        let c = parse_corpus(text, CorpusFormat::Locomo).unwrap();
        let d = &c.dialogues[0];
        assert_eq!(d.dialogue_id, "conv-26");
        let idx: Vec<u32> = d.sessions.iter().map(|s| s.session_index).collect();
        assert_eq!(idx, vec![1, 2, 10]);
        assert_eq!(d.sessions[2].turns[0].text, "tenth");
        assert_eq!(d.sessions[0].date_label, "1 pm");
        let qs = &c.questions["conv-26"];
        let cats: Vec<Category> = qs.iter().map(|q| q.category).collect();
        assert_eq!(
            cats,
            vec![Category::MultiHop, Category::Temporal, Category::OpenDomain, Category::SingleHop, Category::Other]
        );
        assert_eq!(qs[1].gold_answer, "2022");
        assert_eq!(qs[4].gold_answer, "v");
        assert_eq!(c.category_counts().total(), 5);
        assert_eq!(
            c.category_counts().to_string(),
            "multi_hop=1 temporal=1 open_domain=1 single_hop=1\nother=1"
        );
    }
}
