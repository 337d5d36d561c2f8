use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_urbanrhythm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn error_json(out: &Output) -> serde_json::Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().expect("error line");
    serde_json::from_str(line).expect("machine-readable error")
}

const SMALL: &str = "[synth]\nagents = 30\ndays = 7\n[cluster]\nks = [3, 5]\nprimary_k = 5\n";

#[test]
fn pipeline_then_verify() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("art");
    let o = run(&["--config", &cfg, "pipeline", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stages: Vec<String> = String::from_utf8_lossy(&o.stdout)
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["stage"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(stages, ["synth", "ingest", "features", "cluster", "motifs", "validate", "report"]);
    let v = run(&["--config", &cfg, "verify", "--out", out.to_str().unwrap()]);
    assert!(v.status.success());
    fs::write(out.join("cluster/states.csv"), "slot,timestamp,state\n").unwrap();
    let v = run(&["--config", &cfg, "verify", "--out", out.to_str().unwrap()]);
    assert!(!v.status.success());
}

#[test]
fn missing_config_reports_json() {
    let o = run(&["--config", "/nonexistent/config.toml", "pipeline"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "missing_input");
}

#[test]
fn malformed_config_reports_json() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[motif]\nstride = \"two\"\n");
    let o = run(&["--config", &cfg, "synth"]);
    assert!(!o.status.success());
    assert_eq!(error_json(&o)["error"], "invalid_config");
}

#[test]
fn missing_stage_input_names_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let o = run(&["--config", &cfg, "motifs", "--out", tmp.path().join("empty").to_str().unwrap()]);
    assert!(!o.status.success());
    let e = error_json(&o);
    assert_eq!(e["error"], "missing_input");
    assert_eq!(e["stage"], "motifs");
}

#[test]
fn staged_runs_match_pipeline_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert!(run(&["--config", &cfg, "--threads", "1", "pipeline", "--out", a.to_str().unwrap()]).status.success());
    for stage in ["synth", "ingest", "features", "cluster", "motifs", "validate", "report"] {
        let o = run(&["--config", &cfg, "--threads", "3", stage, "--out", b.to_str().unwrap()]);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["features/features.csv", "cluster/states.csv", "motifs/graph.dot", "report/rings.svg", "validate/tfidf.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn cluster_k_override_on_month_of_slots() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[synth]\nagents = 40\ndays = 30\n");
    let out = tmp.path().join("art");
    let o = out.to_str().unwrap();
    for stage in ["synth", "ingest", "features"] {
        assert!(run(&["--config", &cfg, stage, "--out", o]).status.success());
    }
    let c = run(&["--config", &cfg, "cluster", "--k", "11", "--out", o]);
    assert!(c.status.success(), "{}", String::from_utf8_lossy(&c.stderr));
    let text = fs::read_to_string(out.join("cluster/states.csv")).unwrap();
    let labels: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(labels.len(), 1440);
    assert_eq!(labels.iter().collect::<BTreeSet<_>>().len(), 11);
    assert!(out.join("cluster/states_k11.csv").exists());
    assert!(!out.join("cluster/states_k3.csv").exists());
}

#[test]
fn motif_flags_reach_the_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("art");
    let o = out.to_str().unwrap();
    assert!(run(&["--config", &cfg, "pipeline", "--out", o]).status.success());
    assert!(run(&["--config", &cfg, "motifs", "--no-within-day", "--out", o]).status.success());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("motifs/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["params"]["motif"]["within_day"], false);
    let s = run(&["--config", &cfg, "synth", "--seed", "99", "--out", o]);
    assert!(s.status.success());
    let m: serde_json::Value = serde_json::from_slice(&fs::read(out.join("synth/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["params"]["config"]["seed"], 99);
}

#[test]
fn show_config_round_trips() {
    let o = run(&["show-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("variance_threshold = 0.03"));
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &text);
    assert!(run(&["--config", &cfg, "show-config"]).status.success());
}
