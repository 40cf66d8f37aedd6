use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_trajaudit");
const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures/v1");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .env_remove("TRAJAUDIT_REVIEW_TOKEN")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn summary(dir: &Path, out: &str, command: &str) -> Value {
    let text = std::fs::read_to_string(dir.join(out).join(format!("{command}.summary.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or(Value::Null)
}

#[test]
fn synthesize_scriptenv_goldens_is_deterministic_and_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--seed", "42", "--out", "a", "synthesize", "--scriptenv-goldens"]);
    ok(d, &["--seed", "42", "--out", "b", "synthesize", "--scriptenv-goldens"]);
    let a = std::fs::read(d.join("a/dataset.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(d.join("b/dataset.jsonl")).unwrap());
    let s = summary(d, "a", "synthesize");
    assert_eq!(s["config"]["seed"], 42);
    assert_eq!(s["config"]["generator"], "scripted");
    let by_verdict = &s["result"]["manifest"]["by_verdict"];
    assert_eq!(by_verdict["normal"], 3);
    assert_eq!(by_verdict["anomaly"], 3);
    assert_eq!(s["result"]["manifest"]["conventions"]["type_ii_location"], "first_inserted_step");
    assert_eq!(s["result"]["report"]["synthesis_successes"], 3);

    // Reassembling the written seeds and anomalies gives the same dataset.
    ok(d, &["--out", "c", "assemble", "--seeds", "a/seeds.jsonl", "--anomalies", "a/anomalies.jsonl"]);
    assert_eq!(a, std::fs::read(d.join("c/dataset.jsonl")).unwrap());
}

#[test]
fn oracle_evaluation_scores_one_and_reports_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "o", "synthesize", "--synthetic", "60"]);
    ok(d, &["--out", "o", "--verifier", "oracle", "evaluate", "--dataset", "o/dataset.jsonl"]);
    let m = &summary(d, "o", "evaluate")["result"]["metrics"];
    for key in ["precision", "recall", "macro_f1", "jem", "localization_only_match"] {
        assert_eq!(m[key], 1.0, "{key}");
    }
    assert!(d.join("o/predictions.jsonl").exists());

    let table = ok(d, &["--out", "o", "report", "--summary", "o/evaluate.summary.json", "--label", "Oracle"]);
    assert!(table.contains("| Verifier | Precision | Recall | Macro-F1 | JEM |"));
    assert!(table.contains("| Oracle | 100.00 | 100.00 | 100.00 | 100.00 | 100.00 |"));
    assert_eq!(std::fs::read_to_string(d.join("o/report.md")).unwrap().lines().next(), table.lines().next());

    // Scoring the written predictions file gives the same numbers.
    ok(d, &["--out", "p", "evaluate", "--dataset", "o/dataset.jsonl", "--predictions", "o/predictions.jsonl"]);
    assert_eq!(&summary(d, "p", "evaluate")["result"]["metrics"], m);
}

#[test]
fn split_validates_fraction_and_keeps_pairs_together() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "o", "synthesize", "--synthetic", "130"]);
    let bad = run(d, &["--out", "o", "--test-fraction", "1.5", "split", "--dataset", "o/dataset.jsonl"]);
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(stderr_json(&bad)["code"], "Usage");

    ok(d, &["--out", "o", "--seed", "3", "split", "--dataset", "o/dataset.jsonl"]);
    let s = summary(d, "o", "split");
    let (train, test) = (&s["result"]["train"], &s["result"]["test"]);
    assert_eq!(train["total"].as_u64().unwrap() + test["total"].as_u64().unwrap(), 260);
    assert_eq!(test["by_verdict"]["normal"], test["by_verdict"]["anomaly"]);
    assert_eq!(test["conventions"]["type_ii_location"], "first_inserted_step");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(d, &["synthesize"]).status.code(), Some(2));
    assert_eq!(run(d, &["--help"]).status.code(), Some(0));

    std::fs::write(d.join("bad.toml"), "seeed = 1\n").unwrap();
    let out = run(d, &["--config", "bad.toml", "monitor-run"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("seeed"));

    let out = run(d, &["--out", "o", "evaluate", "--dataset", "missing.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["code"], "Parse");

    assert_eq!(run(d, &["--out", "o", "monitor-run", "--scenario", "nope"]).status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), "seed = 7\nretry_budget = 1\nout = \"from-file\"\n").unwrap();
    ok(d, &["--config", "c.toml", "--seed", "9", "monitor-run"]);
    let s = summary(d, "from-file", "monitor-run");
    assert_eq!(s["config"]["seed"], 9);
    assert_eq!(s["config"]["retry_budget"], 1);
    assert_eq!(s["result"]["monitor"]["retry_budget"], 1);
}

#[test]
fn faucet_loop_monitor_and_restart_comparison() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "o", "monitor-run"]);
    let run0 = &summary(d, "o", "monitor-run")["result"]["runs"][0];
    assert_eq!(run0["status"], "completed");
    assert_eq!(run0["rollbacks"], serde_json::json!([[8, 7]]));
    let report = std::fs::read_to_string(d.join("o/monitor-run.report.jsonl")).unwrap();
    assert_eq!(report.lines().count(), 3);

    let stdout = ok(d, &["--out", "o", "compare-restart"]);
    assert!(stdout.contains("faucet-loop: monitored 15 steps, restart baseline 22 steps (+7)"));
    assert_eq!(summary(d, "o", "compare-restart")["result"]["runs"][0]["extra_baseline_steps"], 7);

    ok(d, &["--out", "r", "--verifier", "rule", "monitor-run", "--all"]);
    let s = summary(d, "r", "monitor-run");
    assert_eq!(s["result"]["completed"], s["result"]["runs"].as_array().unwrap().len());
}

#[test]
fn remote_verifier_replays_the_recording() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = format!(
        "verifier = \"remote\"\n[gateway]\nmodel_name = \"stub-model\"\nbase_url = \"http://127.0.0.1:9/v1\"\nverifier_recording = \"{FIXTURES}/recordings/faucet_loop_verifier.jsonl\"\n"
    );
    std::fs::write(d.join("c.toml"), config).unwrap();
    let fixture = format!("{FIXTURES}/faucet_loop.jsonl");
    ok(d, &["--config", "c.toml", "--out", "o", "evaluate", "--dataset", &fixture]);
    let preds = std::fs::read_to_string(d.join("o/predictions.jsonl")).unwrap();
    let p: Value = serde_json::from_str(preds.lines().next().unwrap()).unwrap();
    assert_eq!((p["verdict"].clone(), p["error_step"].clone()), ("anomaly".into(), 8.into()));
}

#[test]
fn review_serve_needs_a_token_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["--out", "o", "synthesize", "--synthetic", "60"]);
    let out = run(d, &["--out", "o", "review-serve", "--dataset", "o/dataset.jsonl"]);
    assert_eq!(out.status.code(), Some(2));

    let mut child = Command::new(BIN)
        .current_dir(d)
        .args(["--out", "o", "review-serve", "--dataset", "o/dataset.jsonl", "--addr", "127.0.0.1:0"])
        .env("TRAJAUDIT_REVIEW_TOKEN", "t0k")
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stdout.take().unwrap()).lines();
    let addr = lines
        .find_map(|l| l.unwrap().strip_prefix("listening on ").map(str::to_string))
        .unwrap();
    let mut stream = TcpStream::connect(&addr).unwrap();
    let body = r#"{"seed": 1, "per_domain": 2}"#;
    write!(
        stream,
        "POST /review-sets HTTP/1.1\r\nHost: x\r\nX-Access-Token: t0k\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(response.starts_with("HTTP/1.1 201"), "{response}");
    assert!(response.contains("\"per_domain_quota\":2"));
    assert_eq!(summary(d, "o", "review-serve")["result"]["listening"], addr.as_str());
}
