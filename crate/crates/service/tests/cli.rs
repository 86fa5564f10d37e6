use std::path::Path;
use std::process::{Command, Output};

use netmap_core::export::validate;
use netmap_core::synth::listing_corpus;

fn netmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_netmap")).args(args).output().unwrap()
}

fn write_corpus(dir: &Path) -> String {
    let path = dir.join("corpus.jsonl");
    let lines: Vec<String> = listing_corpus().iter().map(|p| p.to_json_line()).collect();
    std::fs::write(&path, lines.join("\n")).unwrap();
    path.to_str().unwrap().to_string()
}

fn indexed(dir: &Path) -> String {
    let idx = dir.join("netmap.idx").to_str().unwrap().to_string();
    let out = netmap(&["index", &write_corpus(dir), "--index-path", &idx]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    idx
}

#[test]
fn index_then_network() {
    let dir = tempfile::tempdir().unwrap();
    let idx = indexed(dir.path());
    let map = dir.path().join("map.json");
    let out = netmap(&["network", "--index-path", &idx, "--q", "carbon", "--out", map.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&map).unwrap();
    assert!(validate(&text).is_empty());
    let diag: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(diag["matched_docs"].as_u64().unwrap() > 0);
}

#[test]
fn ingest_report_is_printed() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("x.idx");
    let report = dir.path().join("report.json");
    let out = netmap(&["index", &write_corpus(dir.path()), "--index-path", idx.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["accepted"], listing_corpus().len());
    assert!(report.exists());
}

#[test]
fn usage_errors_exit_1() {
    for args in [&["network", "--frobnicate"][..], &["network", "--max-nodes", "1"], &["network", "--labeling", "loud"], &[]] {
        let out = netmap(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
        assert!(err.contains("usage") || err.contains("--help"), "{args:?}");
    }
    assert_eq!(netmap(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.idx");
    let out = netmap(&["network", "--index-path", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.idx"));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"pub_id\": 5}\n").unwrap();
    let out = netmap(&["index", bad.to_str().unwrap(), "--index-path", dir.path().join("i").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_perimeter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let idx = indexed(dir.path());
    let store = dir.path().join("p.json");
    let out = netmap(&["network", "--index-path", &idx, "--perimeters", store.to_str().unwrap(), "--perimeter", "lab-x"]);
    assert_eq!(out.status.code(), Some(2));
}
