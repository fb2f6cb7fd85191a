use std::path::Path;
use std::process::{Command, Output};

use visa_core::cot::scripted_output;
use visa_core::dataset::{load_instance, load_manifest, load_meta};
use visa_core::gateway::stub::{StubReply, StubServer};

fn visa(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visa")).args(args).output().unwrap()
}

fn generate(dir: &Path, render: bool) -> String {
    let root = dir.join("ds");
    let mut args = vec![
        "generate",
        "--per-scenario",
        "2",
        "--eval-per-scenario",
        "1",
        "--gold-per-scenario",
        "1",
        "--seed",
        "3",
        "--out",
        root.to_str().unwrap(),
    ];
    if !render {
        args.push("--no-render");
    }
    let o = visa(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    root.to_str().unwrap().to_string()
}

fn write_predictions(root: &str, path: &Path) {
    let mut text = String::new();
    for e in load_manifest(Path::new(root)).unwrap() {
        let s = load_meta(Path::new(root), &e.id).unwrap().solution;
        text.push_str(&serde_json::json!({"id": e.id, "raw": format!("<solution>{s}</solution>")}).to_string());
        text.push('\n');
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let o = visa(&["eval", "--dataset", missing.to_str().unwrap(), "--predictions", "p.jsonl"]);
    assert_eq!(o.status.code(), Some(2));

    let root = generate(dir.path(), false);
    let o = visa(&["eval", "--dataset", &root]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let o = visa(&["eval", "--dataset", &root, "--predictions", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bad.jsonl"));

    let o = visa(&["generate", "--per-scenario", "0", "--out", dir.path().join("z").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn offline_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate(dir.path(), false);
    let preds = dir.path().join("p.jsonl");
    write_predictions(&root, &preds);
    let out = dir.path().join("run");
    let o = visa(&["eval", "--dataset", &root, "--split", "all", "--predictions", preds.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["corpus"]["count"], 60);
    assert_eq!(report["corpus"]["means"]["overall"].as_f64(), Some(1.0));
    assert!(out.join("timing.json").exists());

    let o = visa(&["report", out.join("report.json").to_str().unwrap()]);
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("point_charge_potential"));

    let refined = dir.path().join("refined.jsonl");
    let o = visa(&["refine", "--dataset", &root, "--predictions", preds.to_str().unwrap(), "--out", refined.to_str().unwrap()]);
    assert!(o.status.success());
    assert_eq!(std::fs::read_to_string(&refined).unwrap().lines().count(), 30);
}

#[test]
fn transport_failures_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate(dir.path(), false);
    let server = StubServer::start(|_| StubReply::Status(503)).unwrap();
    let out = dir.path().join("run");
    let o = visa(&[
        "eval",
        "--dataset",
        &root,
        "--mode",
        "llm-only",
        "--endpoint",
        &server.base_url(),
        "--retries",
        "1",
        "--backoff-ms",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(server.requests(), 60);
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 30);
    assert!(records.iter().all(|r| r["failure"].as_str().is_some_and(|f| f.contains("503"))));
}

#[test]
fn compliant_cot_stub_golds_everything_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let root = generate(dir.path(), true);
    let rootp = Path::new(&root).to_path_buf();
    let server = StubServer::start(move |req| {
        let inst = load_instance(&rootp, req.instance().unwrap()).unwrap();
        let k: u8 = req.stage().unwrap().trim_start_matches("stage").parse().unwrap();
        StubReply::Content(scripted_output(k, &inst, false))
    })
    .unwrap();
    let out = dir.path().join("cot");
    let args = ["cot", "--dataset", &root, "--endpoint", &server.base_url(), "--limit", "4", "--out", out.to_str().unwrap()];
    let o = visa(&args);
    let stdout = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout.contains("gold: 4") && stdout.contains("queried: 24"), "{stdout}");
    let o = visa(&args);
    assert!(String::from_utf8_lossy(&o.stdout).contains("queried: 0  cached: 24"));
    assert_eq!(server.requests(), 24);
}
