#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const STAGES: [&str; 8] = [
    "ingest",
    "filter-meta",
    "filter-content",
    "match",
    "filter-str",
    "classify",
    "aggregate",
    "export",
];

pub fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/berlin/ftm.toml")
}

/// Runs the binary against the Berlin fixture with its work dir at `work`.
pub fn ftm(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftm"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--work")
        .arg(work)
        .args(args)
        .output()
        .expect("spawn ftm")
}

pub fn ok(work: &Path, args: &[&str]) -> String {
    let out = ftm(work, args);
    assert!(
        out.status.success(),
        "ftm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}
