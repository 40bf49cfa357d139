//! C ABI over the `memloop` engine.
//!
//! Every fallible function returns an [`MlStatus`] and writes its result
//! through an out-pointer. On failure the out-pointer is left untouched and
//! [`ml_last_error_message`] describes the problem for the calling thread.
//! Strings handed out by this library must be released with
//! [`ml_string_free`]; handles have their own `*_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use memloop::ama::{run_corpus, Agents};
use memloop::embedding::{Embedder, LocalEmbedder};
use memloop::llm::{Gateway, ScriptedBackend};
use memloop::memory::retrieve_scored;
use memloop::persist::{corpus_digest, load_store, save_state, RunManifest};
use memloop::{Corpus, CorpusFormat, MemoryStore, RunConfig};

/// Result codes shared by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MlStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Llm = 6,
    /// The run finished but every dialogue failed.
    RunFailed = 7,
    Panic = 99,
}

/// A loaded dialogue corpus.
pub struct MlCorpus {
    corpus: Corpus,
}

/// A memory store read from a saved run.
pub struct MlStore {
    store: MemoryStore,
}

/// A text embedder used for retrieval.
pub struct MlEmbedder {
    embedder: Box<dyn Embedder>,
}

struct Failure(MlStatus, String);

impl Failure {
    fn new(status: MlStatus, err: impl std::error::Error) -> Self {
        let mut message = err.to_string();
        let mut source = err.source();
        while let Some(cause) = source {
            message.push_str(": ");
            message.push_str(&cause.to_string());
            source = cause.source();
        }
        Failure(status, message)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let clean = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = clean);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            MlStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(&format!("internal error: {message}"));
            MlStatus::Panic
        }
    }
}

unsafe fn text<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure(MlStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| Failure(MlStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller promises a non-null out-pointer is writable.
    unsafe { ptr.as_mut() }.ok_or_else(|| Failure(MlStatus::NullArgument, format!("{name} is null")))
}

fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    // SAFETY: non-null handles come from this library and are still live.
    unsafe { ptr.as_ref() }.ok_or_else(|| Failure(MlStatus::NullArgument, format!("{name} is null")))
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(std::ptr::null_mut())
}

fn parse_format(format: &str) -> Result<CorpusFormat, Failure> {
    format.parse().map_err(|_| Failure(MlStatus::InvalidArgument, format!("unknown corpus format {format:?}")))
}

/// Message for the last failed call on this thread, or "" after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread and must not be freed.
#[no_mangle]
pub extern "C" fn ml_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ml_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ml_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Token-level F1 between a prediction and a gold answer, in [0, 1].
///
/// # Safety
/// `prediction` and `gold` must be NUL-terminated strings; `out_score` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_f1_score(prediction: *const c_char, gold: *const c_char, out_score: *mut f64) -> MlStatus {
    guard(|| {
        let (p, g) = (text(prediction, "prediction")?, text(gold, "gold")?);
        *out(out_score, "out_score")? = memloop::f1_score(p, g);
        Ok(())
    })
}

/// Unigram BLEU with brevity penalty, in [0, 1].
///
/// # Safety
/// Same contract as [`ml_f1_score`].
#[no_mangle]
pub unsafe extern "C" fn ml_bleu1(prediction: *const c_char, gold: *const c_char, out_score: *mut f64) -> MlStatus {
    guard(|| {
        let (p, g) = (text(prediction, "prediction")?, text(gold, "gold")?);
        *out(out_score, "out_score")? = memloop::bleu1(p, g);
        Ok(())
    })
}

/// Loads a corpus file. `format` is "native" or "locomo".
///
/// # Safety
/// String arguments must be NUL-terminated; `out_corpus` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_corpus_load(
    path: *const c_char,
    format: *const c_char,
    out_corpus: *mut *mut MlCorpus,
) -> MlStatus {
    guard(|| {
        let path = text(path, "path")?;
        let format = parse_format(text(format, "format")?)?;
        let slot = out(out_corpus, "out_corpus")?;
        let corpus = memloop::load_corpus(Path::new(path), format).map_err(|e| {
            let status = match e {
                memloop::CorpusError::Io { .. } => MlStatus::Io,
                _ => MlStatus::Parse,
            };
            Failure::new(status, e)
        })?;
        *slot = Box::into_raw(Box::new(MlCorpus { corpus }));
        Ok(())
    })
}

/// # Safety
/// `corpus` must come from [`ml_corpus_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ml_corpus_free(corpus: *mut MlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Number of dialogues in the corpus; 0 for a null handle.
///
/// # Safety
/// `corpus` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ml_corpus_dialogue_count(corpus: *const MlCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.dialogues.len())
}

/// Question counts per category as a JSON object, for example
/// `{"multi_hop":1,"open_domain":0,"other":0,"single_hop":3,"temporal":2}`.
///
/// # Safety
/// `corpus` must be a live handle; `out_json` must be writable. Free the
/// result with [`ml_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ml_corpus_counts_json(corpus: *const MlCorpus, out_json: *mut *mut c_char) -> MlStatus {
    guard(|| {
        let corpus = handle(corpus, "corpus")?;
        let slot = out(out_json, "out_json")?;
        let counts = corpus.corpus.category_counts();
        let all = [
            memloop::Category::MultiHop,
            memloop::Category::Temporal,
            memloop::Category::OpenDomain,
            memloop::Category::SingleHop,
            memloop::Category::Other,
        ];
        let map: serde_json::Map<String, serde_json::Value> =
            all.iter().map(|c| (c.as_str().to_owned(), counts.get(*c).into())).collect();
        *slot = owned_string(serde_json::Value::Object(map).to_string());
        Ok(())
    })
}

/// The local embedder with the default run configuration, which is what
/// [`ml_run_adapt`] uses when no configuration is given.
#[no_mangle]
pub extern "C" fn ml_embedder_default_new() -> *mut MlEmbedder {
    let e = RunConfig::default().embedding;
    ml_embedder_local_new(e.dimension, e.seed)
}

/// The built-in hashed bag-of-words embedder with an explicit shape.
/// Returns null when `dimension` is 0.
#[no_mangle]
pub extern "C" fn ml_embedder_local_new(dimension: usize, seed: u64) -> *mut MlEmbedder {
    if dimension == 0 {
        set_last_error("dimension must be positive");
        return std::ptr::null_mut();
    }
    Box::into_raw(Box::new(MlEmbedder { embedder: Box::new(LocalEmbedder::new(dimension, seed)) }))
}

/// # Safety
/// `embedder` must come from [`ml_embedder_local_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ml_embedder_free(embedder: *mut MlEmbedder) {
    if !embedder.is_null() {
        drop(Box::from_raw(embedder));
    }
}

/// Loads one dialogue's memory store (`<run>/<dialogue>.memstore.jsonl`).
///
/// # Safety
/// `path` must be NUL-terminated; `out_store` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_store_load(path: *const c_char, out_store: *mut *mut MlStore) -> MlStatus {
    guard(|| {
        let path = text(path, "path")?;
        let slot = out(out_store, "out_store")?;
        let store = load_store(Path::new(path)).map_err(|e| {
            let status = match e {
                memloop::persist::PersistError::Io { .. } => MlStatus::Io,
                _ => MlStatus::Parse,
            };
            Failure::new(status, e)
        })?;
        *slot = Box::into_raw(Box::new(MlStore { store }));
        Ok(())
    })
}

/// # Safety
/// `store` must come from [`ml_store_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn ml_store_free(store: *mut MlStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Number of entries in the store; 0 for a null handle.
///
/// # Safety
/// `store` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ml_store_len(store: *const MlStore) -> usize {
    store.as_ref().map_or(0, |s| s.store.len())
}

/// Top-`k` entries for `query` as a JSON array of
/// `{"entry_id", "score", "summary", "timestamp_label"}` objects, best first.
/// The embedder must match the one the store was built with.
///
/// # Safety
/// Handles must be live; `query` must be NUL-terminated; `out_json` must be
/// writable. Free the result with [`ml_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ml_store_retrieve_json(
    store: *const MlStore,
    embedder: *const MlEmbedder,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> MlStatus {
    guard(|| {
        let store = handle(store, "store")?;
        let embedder = handle(embedder, "embedder")?;
        let query = text(query, "query")?;
        let slot = out(out_json, "out_json")?;
        let hits = retrieve_scored(&store.store, query, k, embedder.embedder.as_ref())
            .map_err(|e| Failure::new(MlStatus::InvalidArgument, e))?;
        let rows: Vec<serde_json::Value> = hits
            .into_iter()
            .map(|(score, e)| {
                serde_json::json!({
                    "entry_id": e.entry_id,
                    "score": score,
                    "summary": e.summary,
                    "timestamp_label": e.timestamp_label,
                })
            })
            .collect();
        *slot = owned_string(serde_json::Value::Array(rows).to_string());
        Ok(())
    })
}

/// Runs the adaptation loop over a corpus with responses served from a
/// replay log, and saves the run directory. `config_json` may be null for
/// the defaults; otherwise it is a full or partial run configuration.
/// On success `out_summary_json` receives one object per dialogue with
/// `dialogue_id`, `pre`, `post` (each `[passed, total]` or null),
/// `strategy_version` and `error`.
///
/// Returns `RunFailed` (with the summary still written) when every dialogue
/// failed.
///
/// # Safety
/// String arguments other than `config_json` must be NUL-terminated and
/// non-null; `out_summary_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ml_run_adapt(
    corpus_path: *const c_char,
    format: *const c_char,
    replay_path: *const c_char,
    run_dir: *const c_char,
    config_json: *const c_char,
    parallelism: usize,
    out_summary_json: *mut *mut c_char,
) -> MlStatus {
    guard(|| {
        let corpus_path = text(corpus_path, "corpus_path")?;
        let format = parse_format(text(format, "format")?)?;
        let replay_path = text(replay_path, "replay_path")?;
        let run_dir = text(run_dir, "run_dir")?;
        let config: RunConfig = if config_json.is_null() {
            RunConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config_json")?)
                .map_err(|e| Failure::new(MlStatus::InvalidArgument, e))?
        };
        let slot = out(out_summary_json, "out_summary_json")?;

        let corpus = memloop::load_corpus(Path::new(corpus_path), format).map_err(|e| Failure::new(MlStatus::Io, e))?;
        let backend = ScriptedBackend::from_file(Path::new(replay_path)).map_err(|e| Failure::new(MlStatus::Llm, e))?;
        let gateway = Gateway::new(Arc::new(backend), config.llm.clone(), memloop::PromptSet::default());
        let embedder = LocalEmbedder::new(config.embedding.dimension, config.embedding.seed);
        let agents = Agents { gateway: &gateway, embedder: &embedder, store_config: &config.store };
        let artifacts = run_corpus(&corpus, &config.ama, agents, parallelism.max(1))
            .map_err(|e| Failure::new(MlStatus::InvalidArgument, e))?;
        let manifest = RunManifest::new(config, corpus_digest(&corpus));
        save_state(Path::new(run_dir), manifest, &artifacts).map_err(|e| Failure::new(MlStatus::Io, e))?;

        let pair = |p: Option<memloop::ama::PassCount>| p.map(|p| serde_json::json!([p.passed, p.total]));
        let rows: Vec<serde_json::Value> = artifacts
            .dialogues
            .iter()
            .map(|d| {
                serde_json::json!({
                    "dialogue_id": d.dialogue_id,
                    "pre": pair(d.pre()),
                    "post": pair(d.post()),
                    "strategy_version": d.strategy.version,
                    "error": d.error,
                })
            })
            .collect();
        *slot = owned_string(serde_json::Value::Array(rows).to_string());
        let failed = artifacts.dialogues.iter().filter(|d| d.error.is_some()).count();
        if failed > 0 && failed == artifacts.dialogues.len() {
            return Err(Failure(MlStatus::RunFailed, format!("{failed} of {failed} dialogues failed")));
        }
        Ok(())
    })
}
