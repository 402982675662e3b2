use std::process::{Command, Output};

use serde_json::Value;

fn tacos(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tacos")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn reports(out: &Output) -> Vec<Value> {
    serde_json::Deserializer::from_slice(&out.stdout).into_iter::<Value>().map(Result::unwrap).collect()
}

#[test]
fn run_task0_succeeds_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.jsonl");
    let transcript = dir.path().join("transcript.jsonl");
    let out = tacos(&[
        "run",
        "-i",
        "All drones, take off.",
        "--trace",
        trace.to_str().unwrap(),
        "--transcript",
        transcript.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = reports(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["success"], true);
    assert_eq!(r[0]["cycles_used"], 1);

    let audit = tacos(&["audit", trace.to_str().unwrap()]);
    assert!(audit.status.success());
    let a: Value = serde_json::from_slice(&audit.stdout).unwrap();
    assert_eq!(a["violations"].as_array().unwrap().len(), 0);

    let plot = tacos(&["plot", trace.to_str().unwrap()]);
    let csv = String::from_utf8(plot.stdout).unwrap();
    assert!(csv.starts_with("uav,time,x,y,z,speed\n"));
    assert!(std::fs::read_to_string(&transcript).unwrap().lines().count() >= 2);
}

#[test]
fn several_instructions_share_a_session() {
    let out = tacos(&["run", "-i", "Alfa, take off", "-i", "All drones, take off.", "--size", "8"]);
    assert!(out.status.success());
    let r = reports(&out);
    assert_eq!(r.len(), 2);
    assert_eq!(r[0]["plan_id"], "plan-0001");
    assert_eq!(r[1]["plan_id"], "plan-0002");
}

#[test]
fn missing_scenario_is_an_error() {
    let out = tacos(&["run", "--scenario", "/definitely/not/here.scn", "-i", "Alfa, take off"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("loading scenario"), "{err}");
    assert!(out.stdout.is_empty());
}

#[test]
fn bad_mode_is_rejected_by_the_parser() {
    let out = tacos(&["run", "--mode", "nope", "-i", "x"]);
    assert!(!out.status.success());
}

#[test]
fn mode_reaches_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("t.jsonl");
    let out = tacos(&["run", "--mode", "wor", "-i", "All drones, take off.", "--transcript", transcript.to_str().unwrap()]);
    assert!(out.status.success());
    // The supervisor sees the plan but not the coordinator's reasoning.
    let text = std::fs::read_to_string(&transcript).unwrap();
    assert!(text.contains("COORDINATOR REASONING:\\n(withheld)"), "reasoning reached the supervisor");

    let full = dir.path().join("f.jsonl");
    tacos(&["run", "-i", "All drones, take off.", "--transcript", full.to_str().unwrap()]);
    let text = std::fs::read_to_string(&full).unwrap();
    assert!(text.contains("COORDINATOR REASONING:") && !text.contains("(withheld)"));
}

#[test]
fn bench_writes_results() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tacos(&["bench", "--task", "0", "--mode", "full,wor", "--size", "4", "--runs", "2", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("results.json")).unwrap()).unwrap();
    assert_eq!(results.as_array().unwrap().len(), 2);
    let csv = std::fs::read_to_string(out_dir.join("plot.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(out_dir.join("report.txt").exists());
}

#[test]
fn fixture_round_trips_through_script_backend() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("demo.json");
    assert!(tacos(&["fixture", "--demo", "-o", script.to_str().unwrap()]).status.success());
    let out = tacos(&["run", "--backend", "script", "--script", script.to_str().unwrap(), "-i", "Alfa, take off"]);
    assert!(out.status.success());
    assert_eq!(reports(&out)[0]["success"], true);
}

#[test]
fn fuzz_reports_clean_runs() {
    let out = tacos(&["fuzz", "--size", "4", "--count", "2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.ends_with("violations 0")));
}
