//! Compiles a C program against the generated header and the shared
//! library, then runs it.

use std::path::{Path, PathBuf};
use std::process::Command;

fn profile_dir() -> PathBuf {
    // target/<profile>/deps/<this test> -> target/<profile>
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/memloop.h")).unwrap();
    for symbol in [
        "typedef struct MlCorpus MlCorpus;",
        "typedef struct MlStore MlStore;",
        "typedef struct MlEmbedder MlEmbedder;",
        "ML_STATUS_OK = 0",
        "ml_last_error_message(void)",
        "ml_string_free(char *s)",
        "ml_run_adapt(",
        "ml_store_retrieve_json(",
    ] {
        assert!(header.contains(symbol), "header lacks {symbol}");
    }
}

#[test]
fn c_client_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = profile_dir();
    if !lib_dir.join("libmemloop_ffi.so").is_file() {
        eprintln!("skipping: no shared library in {}", lib_dir.display());
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let exe = out.path().join("client");
    let compiled = Command::new("cc")
        .arg(manifest.join("tests/c/client.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lmemloop_ffi", "-lm", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .output();
    let compiled = match compiled {
        Ok(o) => o,
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    };
    assert!(compiled.status.success(), "{}", String::from_utf8_lossy(&compiled.stderr));
    let run = Command::new(&exe).arg(manifest.join("../core/fixtures/locomo_sample/locomo.json")).output().unwrap();
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let counts: serde_json::Value = serde_json::from_slice(&run.stdout).unwrap();
    assert_eq!(counts["single_hop"], 3);
    assert_eq!(counts["other"], 2);
}
