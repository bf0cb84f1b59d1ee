mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{break_traces, write_cli_fixture};

fn stc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stc"))
        .current_dir(dir)
        .args(args)
        .env_remove("STC_MEMORY_BUDGET")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

const CLUSTER: &[&str] = &[
    "cluster", "--input-emb", "e_in.stce", "--output-emb", "e_out.stce", "--vocab", "vocab.jsonl",
    "--stopwords", "stopwords.txt", "--k", "30", "--out", "clusters.stc",
];
const SCORE: &[&str] = &[
    "score", "--trace", "traces.jsonl", "--vocab", "vocab.jsonl", "--clusters", "clusters.stc",
    "--methods", "stc,probability,perplexity", "--out", "scores.csv",
];

#[test]
fn cluster_score_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 1);

    let out = stc(d, CLUSTER);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    assert!(text(&out).contains("into 30 clusters"), "{}", text(&out));
    let clusters = fs::read_to_string(d.join("clusters.stc")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(clusters.lines().next().unwrap()).unwrap();
    assert_eq!(meta["k"], 30);
    assert_eq!(meta["linkage"], "complete");
    assert_eq!(meta["embedding_mode"], "concat");
    // Stopwords and numerals are excluded.
    assert_eq!(clusters.lines().filter(|l| l.ends_with(" -1")).count(), 6);

    let out = stc(d, SCORE);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let scores = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(scores.starts_with("sample_id,method,score\n"));
    assert_eq!(scores.lines().count(), 1 + 3 * 80);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("scores.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["samples"], 80);
    assert_eq!(meta["config_fingerprint"].as_str().unwrap().len(), 64);

    let out = stc(d, &["eval", "--scores", "scores.csv", "--labels", "labels.csv", "--out", "report.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["missing_labels"], 8);
    let methods = report["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        assert_eq!(m["n_samples"], 72);
        let a = m["auroc"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&a));
        assert!(m["prr"].is_f64());
    }
    assert!(report["config_fingerprint"].is_string());
}

#[test]
fn threads_do_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 2);
    let mut runs = Vec::new();
    for threads in ["1", "8"] {
        let mut cluster = CLUSTER.to_vec();
        cluster.extend(["--threads", threads]);
        assert_eq!(stc(d, &cluster).status.code(), Some(0));
        let mut score = SCORE.to_vec();
        score.extend(["--threads", threads]);
        assert_eq!(stc(d, &score).status.code(), Some(0));
        runs.push(
            ["clusters.stc", "scores.csv", "scores.csv.meta.json"].map(|f| fs::read(d.join(f)).unwrap()),
        );
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 3);
    fs::write(
        d.join("stc.toml"),
        "input-emb = \"e_in.stce\"\noutput-emb = \"e_out.stce\"\nvocab = \"vocab.jsonl\"\n\
         stopwords = \"stopwords.txt\"\nk = 12\nlinkage = \"average\"\nmemory-budget = \"64M\"\nthreads = 2\n",
    )
    .unwrap();
    let out = stc(d, &["cluster", "--config", "stc.toml", "--k", "20", "--out", "c.stc"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    let first = fs::read_to_string(d.join("c.stc")).unwrap();
    let meta: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(meta["k"], 20);
    assert_eq!(meta["linkage"], "average");

    fs::write(d.join("bad.toml"), "kay = 3\n").unwrap();
    let out = stc(d, &["cluster", "--config", "bad.toml", "--out", "c.stc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("kay"), "{}", text(&out));
}

#[test]
fn ablation_flags_rename_methods() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 4);
    assert_eq!(stc(d, CLUSTER).status.code(), Some(0));
    let mut args = SCORE.to_vec();
    args.extend(["--no-prefix"]);
    assert_eq!(stc(d, &args).status.code(), Some(0));
    let scores = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert!(scores.contains(",stc-no-prefix,"));
    assert!(!scores.contains(",stc,"));
}

#[test]
fn broken_samples_give_partial_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 5);
    break_traces(d);
    assert_eq!(stc(d, CLUSTER).status.code(), Some(0));
    let out = stc(d, SCORE);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out));
    let msg = text(&out);
    assert!(msg.contains("skipped <unparsed line>"), "{msg}");
    assert!(msg.contains("skipped unknown-token"), "{msg}");
    let scores = fs::read_to_string(d.join("scores.csv")).unwrap();
    assert_eq!(scores.lines().count(), 1 + 3 * 80);
}

#[test]
fn fatal_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 6);

    let out = stc(d, &["cluster", "--input-emb", "e_in.stce", "--out", "c.stc"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("missing required --vocab"));

    let out = stc(d, &["score", "--nope"]);
    assert_eq!(out.status.code(), Some(2));

    let mut args = CLUSTER.to_vec();
    args.extend(["--memory-budget", "1K"]);
    let out = stc(d, &args);
    assert_eq!(out.status.code(), Some(2));
    // 151 clusterable tokens: 151 * 150 / 2 * 4 bytes.
    assert!(text(&out).contains("151 points needs 45300 bytes"), "{}", text(&out));

    let out = Command::new(env!("CARGO_BIN_EXE_stc"))
        .current_dir(d)
        .args(CLUSTER)
        .env("STC_MEMORY_BUDGET", "2K")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("budget of 2048 bytes"), "{}", text(&out));

    let mut args = CLUSTER.to_vec();
    args.extend(["--k", "1000"]);
    let out = stc(d, &args);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("k = 1000 outside 1..=151"), "{}", text(&out));

    let out = stc(d, &["eval", "--scores", "missing.csv", "--labels", "labels.csv", "--out", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out).contains("missing.csv"));
}

#[test]
fn pipeline_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_cli_fixture(d, 7);
    let out = stc(
        d,
        &[
            "pipeline", "--input-emb", "e_in.stce", "--output-emb", "e_out.stce", "--vocab", "vocab.jsonl",
            "--stopwords", "stopwords.txt", "--k", "25", "--trace", "traces.jsonl", "--labels", "labels.csv",
            "--out-dir", "run",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", text(&out));
    for f in ["clusters.stc", "scores.csv", "scores.csv.meta.json", "report.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    assert_eq!(text(&out).lines().count(), 3);
}
