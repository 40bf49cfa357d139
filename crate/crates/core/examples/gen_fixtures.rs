//! Regenerates the committed fixtures under `fixtures/`.
//!
//! `synthetic10` is generated here; every fixture's `replay.jsonl` is
//! recorded by running the real pipeline against the rule-based simulator,
//! once per configuration the tests and the CLI exercise.
//!
//!     cargo run -p memloop --example gen_fixtures

use std::path::Path;
use std::sync::Arc;

use memloop::ama::{run_corpus, Agents, RunArtifacts};
use memloop::bench::evaluate_run;
use memloop::canonical;
use memloop::config::RunConfig;
use memloop::demo::demo_config;
use memloop::dialogue::{BenchmarkQuestion, Category, Corpus, Dialogue, Session, Turn};
use memloop::embedding::LocalEmbedder;
use memloop::llm::sim::{Probe, ScriptedAnswer, SessionScript, SimModel, SimScript};
use memloop::llm::{ChatBackend, Gateway, RecordingBackend, ReplayLog};
use memloop::persist::write_native;
use memloop::prompts::PromptSet;
use memloop::{load_corpus, CorpusFormat};

const NAMES: [&str; 20] = [
    "Ava", "Ben", "Cleo", "Dev", "Elin", "Farid", "Greta", "Hugo", "Iris", "Jonah", "Kira", "Luis", "Maya", "Nils",
    "Omar", "Priya", "Quinn", "Rosa", "Sami", "Tess",
];
const HOBBIES: [&str; 10] =
    ["pottery", "salsa", "chess", "violin", "climbing", "sourdough", "watercolor", "kayaking", "fencing", "origami"];
const PLACES: [&str; 7] =
    ["community center", "library", "youth club", "art school", "rec hall", "old theater", "harbor studio"];
const RELATIVES: [&str; 5] = ["sister", "brother", "cousin", "aunt", "grandfather"];
const CITIES: [&str; 10] =
    ["Lisbon", "Denver", "Osaka", "Nairobi", "Quebec", "Tallinn", "Perth", "Bogota", "Krakow", "Seattle"];
const ITEMS: [&str; 10] = [
    "bookshelf", "espresso machine", "rowing machine", "piano", "aquarium", "sofa bed", "telescope", "rug",
    "standing desk", "record player",
];

/// Dialogues 1..=7 lose one fact from session 1 unless the strategy is amended.
const GAP_DIALOGUES: usize = 7;
const GAP_STRATEGY: &str = "Record every new activity or class a speaker signs up for, including where it takes place.";

struct Fact {
    speaker_line: (String, String),
    memory: String,
    probe: Probe,
}

fn facts_for(d: usize, s: usize, a: &str, b: &str) -> [Fact; 3] {
    let i = d * 3 + s;
    let hobby = HOBBIES[i % HOBBIES.len()];
    let place = PLACES[i % PLACES.len()];
    let relative = RELATIVES[i % RELATIVES.len()];
    let city = CITIES[(i + 3) % CITIES.len()];
    let item = ITEMS[(i + 7) % ITEMS.len()];
    let room = ["apartment", "office", "cabin"][s];
    [
        Fact {
            speaker_line: (a.into(), format!("Guess what, I signed up for {hobby} classes at the {place}.")),
            memory: format!("{a} signed up for {hobby} classes at the {place}. | {}, {hobby}, classes, {place}", a.to_lowercase()),
            probe: Probe {
                question: format!("What classes did {a} sign up for at the {place}?"),
                answer: format!("{hobby} classes"),
                evidence: format!("{hobby} classes"),
                response: Some(format!("{a} signed up for {hobby} classes at the {place}.")),
                supplement: Some(format!("{a} signed up for {hobby} classes at the {place}.")),
            },
        },
        Fact {
            speaker_line: (b.into(), format!("My {relative} is moving to {city} next month.")),
            memory: format!("{b}'s {relative} is moving to {city} next month. | {}, {relative}, {city}, moving", b.to_lowercase()),
            probe: Probe {
                question: format!("Where is {b}'s {relative} moving?"),
                answer: city.into(),
                evidence: format!("moving to {city}"),
                response: Some(format!("{b}'s {relative} is moving to {city}.")),
                supplement: Some(format!("{b}'s {relative} is moving to {city} next month.")),
            },
        },
        Fact {
            speaker_line: (a.into(), format!("I finally bought a {item} for my {room}.")),
            memory: format!("{a} bought a {item} for the {room}. | {}, {item}, {room}", a.to_lowercase()),
            probe: Probe {
                question: format!("What did {a} buy for the {room}?"),
                answer: format!("A {item}"),
                evidence: format!("bought a {item}"),
                response: Some(format!("{a} bought a {item}.")),
                supplement: Some(format!("{a} bought a {item} for the {room}.")),
            },
        },
    ]
}

fn synthetic10() -> (Corpus, SimScript) {
    let mut corpus = Corpus::default();
    let mut script = SimScript { improve_instruction: Some(GAP_STRATEGY.into()), sessions: Vec::new(), answers: Vec::new() };
    for d in 0..10 {
        let dialogue_id = format!("syn-{:02}", d + 1);
        let (a, b) = (NAMES[2 * d], NAMES[2 * d + 1]);
        let mut sessions = Vec::new();
        let mut questions = Vec::new();
        for s in 0..3 {
            let facts = facts_for(d, s, a, b);
            let mut turns = vec![(a.to_owned(), format!("Hi {b}, it has been a while!")), (b.to_owned(), format!("Hey {a}! Tell me everything."))];
            turns.extend(facts.iter().map(|f| f.speaker_line.clone()));
            turns.push((b.to_owned(), "Talk soon!".into()));
            let turns = turns
                .into_iter()
                .enumerate()
                .map(|(t, (speaker, text))| Turn { turn_id: format!("D{}:{}", s + 1, t + 1), speaker, text })
                .collect();
            sessions.push(Session {
                session_index: (s + 1) as u32,
                date_label: format!("10:00 am on {} March, 2023", 3 + 7 * s + d),
                turns,
            });

            let gap = s == 0 && d < GAP_DIALOGUES;
            let mut memory = Vec::new();
            let mut hidden = Vec::new();
            for (j, f) in facts.iter().enumerate() {
                if gap && j == 0 {
                    hidden.push(f.memory.clone());
                } else {
                    memory.push(f.memory.clone());
                }
            }
            let probes: Vec<Probe> = facts.iter().map(|f| f.probe.clone()).collect();
            let category = [Category::SingleHop, Category::MultiHop, Category::OpenDomain][s];
            questions.push(BenchmarkQuestion {
                question: probes[0].question.clone(),
                gold_answer: probes[0].answer.clone(),
                category,
                evidence_ids: vec![format!("D{}:3", s + 1)],
            });
            if s == 1 {
                let temporal = format!("When is {b}'s {} moving?", RELATIVES[(d * 3 + s) % RELATIVES.len()]);
                let city = CITIES[(d * 3 + s + 3) % CITIES.len()];
                questions.push(BenchmarkQuestion {
                    question: temporal.clone(),
                    gold_answer: "next month".into(),
                    category: Category::Temporal,
                    evidence_ids: vec!["D2:4".into()],
                });
                script.answers.push(ScriptedAnswer {
                    question: temporal,
                    response: "Next month.".into(),
                    evidence: format!("moving to {city} next month"),
                });
            }
            script.sessions.push(SessionScript {
                dialogue_id: dialogue_id.clone(),
                session_index: (s + 1) as u32,
                memory,
                hidden_memory: hidden,
                probes,
            });
        }
        corpus.questions.insert(dialogue_id.clone(), questions);
        corpus.dialogues.push(Dialogue { dialogue_id, sessions });
    }
    (corpus, script)
}

fn config_with(f: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut c = RunConfig::default();
    f(&mut c);
    c
}

/// Runs `configs` (and an eval with judge after the first) through a recorder.
fn record(dir: &Path, configs: &[RunConfig]) {
    let corpus = load_corpus(&dir.join("corpus.json"), CorpusFormat::Native).expect("fixture corpus");
    let script = serde_json::from_str(&std::fs::read_to_string(dir.join("script.json")).unwrap()).unwrap();
    let sim = SimModel::new(&corpus, script, &PromptSet::default()).expect("script matches corpus");
    let recorder = Arc::new(RecordingBackend::in_memory(sim, ReplayLog::new()));
    for (i, config) in configs.iter().enumerate() {
        let backend: Arc<dyn ChatBackend> = recorder.clone();
        let gateway = Gateway::new(backend, config.llm.clone(), PromptSet::default());
        let embedder = LocalEmbedder::new(config.embedding.dimension, config.embedding.seed);
        let agents = Agents { gateway: &gateway, embedder: &embedder, store_config: &config.store };
        let artifacts: RunArtifacts = run_corpus(&corpus, &config.ama, agents, 1).expect("run");
        for d in &artifacts.dialogues {
            assert!(d.error.is_none(), "{}: {:?}", d.dialogue_id, d.error);
        }
        if i == 0 {
            let out = evaluate_run(&corpus, &artifacts, config.ama.retrieval_k, true, &gateway, &embedder, 1).expect("eval");
            assert_eq!(out.answer_failures, 0);
        }
    }
    let mut entries = recorder.snapshot().entries().to_vec();
    entries.sort_by(|a, b| (&a.role_tag, &a.request_digest).cmp(&(&b.role_tag, &b.request_digest)));
    let mut log = ReplayLog::new();
    for e in entries {
        log.insert(e);
    }
    log.save(&dir.join("replay.jsonl")).unwrap();
    println!("{}: {} replay entries", dir.display(), log.len());
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");

    let (corpus, script) = synthetic10();
    let dir = root.join("synthetic10");
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("corpus.json"), write_native(&corpus)).unwrap();
    std::fs::write(dir.join("script.json"), canonical::to_pretty(&script).unwrap()).unwrap();

    record(
        &dir,
        &[
            RunConfig::default(),
            config_with(|c| c.ama.enable_content_update = false),
            config_with(|c| c.ama.enable_strategy_update = false),
            config_with(|c| c.ama.guided_questions = false),
            config_with(|c| c.ama.qa_per_session = 1),
            config_with(|c| c.ama.qa_per_session = 10),
            config_with(|c| c.ama.qa_per_session = 0),
        ],
    );
    record(&root.join("table5"), &[RunConfig::default(), demo_config()]);
    record(&root.join("two_dialogue"), &[RunConfig::default()]);
}
