//! The `propdial` binary over the bundled fixture.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use propdial::corpus::PropositionSet;
use propdial::synth::{read_dialogs, validate_dialogs};
use serde_json::Value;

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/propdial.toml")
}

fn propdial(work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_propdial"))
        .arg("--config")
        .arg(fixture_config())
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .env_remove("LLM_BASE_URL")
        .env_remove("EMBED_BASE_URL")
        .output()
        .unwrap()
}

fn ok(work: &Path, args: &[&str]) -> String {
    let out = propdial(work, args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?} failed: {stderr}");
    assert!(!stderr.contains("error:"), "{stderr}");
    String::from_utf8(out.stdout).unwrap()
}

fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for step in ["ingest", "propose", "synthesize", "index"] {
        ok(dir.path(), &[step]);
    }
    dir
}

#[test]
fn pipeline_produces_valid_dialogs() {
    let dir = prepared();
    let w = dir.path();
    let props = PropositionSet::read_jsonl(&w.join("propositions.jsonl")).unwrap();
    let dialogs = read_dialogs(&w.join("dialogs.jsonl")).unwrap();
    assert_eq!(dialogs.len(), 5);
    validate_dialogs(&dialogs, &props).unwrap();
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(w.join("reports/synthesis.json")).unwrap()).unwrap();
    assert_eq!(report["documents_skipped"], serde_json::json!(["links"]));
    assert_eq!(report["pairs_removed_not_accepted"], 2);
    assert_eq!(report["pairs_removed_ungrounded"], 1);
    assert!(w.join("indexes/bm25.json").exists() && w.join("indexes/dense.json").exists());
}

#[test]
fn evaluate_reports_map_and_recall() {
    let dir = prepared();
    let out = ok(dir.path(), &["evaluate", "--strategy", "query_de", "--retriever", "rrf"]);
    let v: Value = serde_json::from_str(&out).unwrap();
    for key in ["map", "r_at", "per_seed", "n_queries", "aggregation"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for k in ["5", "10", "20"] {
        let r = v["r_at"][k].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&r));
    }
    assert_eq!(v["per_seed"].as_array().unwrap().len(), 3);
    assert!(dir.path().join("reports/eval-query_de-rrf.json").exists());

    let table = ok(dir.path(), &["evaluate", "--strategy", "rewriter", "--retriever", "sparse", "--table"]);
    assert!(table.contains("MAP") && table.contains("rewriter"));
    assert!(dir.path().join("reports/eval-rewriter-sparse.timing.json").exists());
    let report = std::fs::read_to_string(dir.path().join("reports/eval-rewriter-sparse.json")).unwrap();
    assert!(!report.contains("latency"));
}

#[test]
fn respond_passes_through_cannot_answer() {
    let dir = prepared();
    let answer = |strategy: &str| -> Value {
        serde_json::from_str(&ok(
            dir.path(),
            &["respond", "--dialog", "dialog-00000", "--turn", "3", "--strategy", strategy],
        ))
        .unwrap()
    };
    let de = answer("query_de");
    assert_eq!(de["response"], "Bring your completed VA Form 10182 to a regional benefit office.");
    assert_eq!(de["retrieved"].as_array().unwrap().len(), 20);
    assert_eq!(answer("query_co")["response"], "<cannot_answer>");
}

#[test]
fn retrieve_stats_and_export() {
    let dir = prepared();
    let w = dir.path();
    let ranked: Value =
        serde_json::from_str(&ok(w, &["retrieve", "fax VA Form 10182", "--retriever", "sparse", "--k", "3"])).unwrap();
    assert_eq!(ranked["entries"][0]["id"], "board_appeal#4");
    assert_eq!(ranked["entries"].as_array().unwrap().len(), 3);

    let stats: Value = serde_json::from_str(&ok(w, &["stats"])).unwrap();
    assert_eq!(stats["dialogs"], 5);
    assert!(ok(w, &["stats", "--table"]).contains("QA pairs per dialog"));

    ok(w, &["export-pairs"]);
    let tsv = std::fs::read_to_string(w.join("reports/rewriter_pairs.tsv")).unwrap();
    let mut lines = tsv.lines();
    assert_eq!(lines.next(), Some("input\ttarget"));
    assert_eq!(lines.count(), 27);
}

#[test]
fn missing_prerequisites_fail_with_producer_hint() {
    let dir = tempfile::tempdir().unwrap();
    for (cmd, producer) in [
        (vec!["propose"], "ingest"),
        (vec!["evaluate"], "synthesize"),
        (vec!["retrieve", "x"], "index"),
    ] {
        let out = propdial(dir.path(), &cmd);
        assert!(!out.status.success());
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(&format!("run `propdial {producer}` first")), "{stderr}");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let dir = prepared();
    let w = dir.path();
    let before = std::fs::read(w.join("dialogs.jsonl")).unwrap();
    ok(w, &["synthesize"]);
    assert_eq!(before, std::fs::read(w.join("dialogs.jsonl")).unwrap());
}

#[test]
fn per_item_failures_do_not_fail_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let w = dir.path();
    ok(w, &["ingest"]);
    ok(w, &["--units", "sentences", "propose"]);
    // sentence sublists have no recorded responses, so every sublist is flagged
    let report: Value = serde_json::from_str(&ok(w, &["--units", "sentences", "synthesize"])).unwrap();
    assert_eq!(report["dialogs"], 0);
    assert!(!report["sublists_failed"].as_array().unwrap().is_empty());
}
