//! Self-adapting conversational memory.
//!
//! Memory is distilled from dialogue sessions, probed with generated
//! questions, and repaired from the failures: missing facts are added to the
//! store and the extraction instruction is amended for later sessions.

pub mod ama;
pub mod bench;
pub mod canonical;
pub mod config;
pub mod demo;
pub mod dialogue;
pub mod embedding;
pub mod llm;
pub mod memory;
pub mod metrics;
pub mod persist;
pub mod prompts;
pub mod text;

pub use ama::{
    adapt, answer_with_memory, apply_memory_update, apply_strategy_update, generate_qa, judge_answer, run_corpus,
    run_dialogue, run_session, Agents, AmaConfig, AmaError, ExtractionStrategy, QAPair, RunArtifacts, SessionReport,
    Verdict,
};
pub use config::RunConfig;
pub use dialogue::{load_corpus, parse_corpus, Category, Corpus, CorpusError, CorpusFormat, Dialogue, Session, Turn};
pub use embedding::{cosine, Embedder, EmbeddingVector, LocalEmbedder};
pub use llm::{ChatBackend, ChatRequest, Gateway, LlmConfig, LlmError, RoleTag};
pub use memory::{MemoryEntry, MemoryStore, StoreConfig};
pub use metrics::{bleu1, f1_score, normalize_text, MetricReport};
pub use persist::{load_state, save_state, RunManifest};
pub use prompts::PromptSet;
