use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin(dir: &Path) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_poselift"));
    c.env("POSE_LIFT_CACHE", dir.join("cache"));
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = bin(dir).args(args).output().expect("spawn poselift");
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn fail(dir: &Path, args: &[&str]) -> String {
    let out = bin(dir).args(args).output().expect("spawn poselift");
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn manifest(path: &str) -> Value {
    json(format!("{path}.manifest.json"))
}

#[test]
fn eval_on_identical_files_reports_zero() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let data = p(dir, "poses.jsonl");
    run(dir, &["synth", "--n", "12", "--seed", "3", "--out", &data]);
    let rep = p(dir, "eval.json");
    let out = run(dir, &["eval", "--pred", &data, "--gt", &data, "--out", &rep]);
    let r = json(&rep);
    assert_eq!(r["pairs"], 12);
    let settings = r["settings"].as_array().unwrap();
    assert_eq!(settings.len(), 3);
    for s in settings {
        assert_eq!(s["root_aligned"]["mean"].as_f64(), Some(0.0));
        assert_eq!(s["absolute"]["mean"].as_f64(), Some(0.0));
        assert_eq!(s["root_aligned"]["median"].as_f64(), Some(0.0));
    }
    assert!(String::from_utf8_lossy(&out.stdout).contains("H36M-17"));
    assert_eq!(manifest(&rep)["command"], "eval");
}

#[test]
fn adapt_manifest_records_strategy_and_train_size() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let adult = p(dir, "adult.jsonl");
    let infant = p(dir, "infant.jsonl");
    let prior = p(dir, "prior.ckpt");
    let ca = p(dir, "ca.ckpt");
    run(dir, &["synth", "--n", "40", "--out", &adult]);
    run(dir, &["synth", "--n", "50", "--seed", "1", "--bone-scale", "0.5", "--domain", "infant", "--out", &infant]);
    run(dir, &["train-prior", "--data", &adult, "--epochs", "2", "--width", "16", "--groups", "4", "--out", &prior]);
    run(dir, &["adapt", "--data", &infant, "--base", &prior, "--strategy", "ca", "--limit", "20", "--epochs", "2", "--out", &ca]);
    let m = manifest(&ca);
    assert_eq!(m["command"], "adapt");
    assert_eq!(m["config"]["strategy"], "ca");
    assert_eq!(m["config"]["train_size"], 20);
    assert_eq!(m["config"]["train"]["hidden_width"], 16);
    let inputs: Vec<&str> = m["inputs"].as_array().unwrap().iter().map(|e| e["path"].as_str().unwrap()).collect();
    assert!(inputs.contains(&infant.as_str()) && inputs.contains(&prior.as_str()));
    assert_eq!(m["outputs"][0]["hash"].as_str().unwrap().len(), 64);

    // The delta resolves its base and lifts.
    let pred = p(dir, "pred.jsonl");
    run(dir, &[
        "lift", "--prior", &ca, "--data", &infant, "--pool", &infant, "--iterations", "5",
        "--depth-freeze-until", "4", "--init-steps", "10", "--out", &pred,
    ]);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cfg = dir.join("synth.json");
    std::fs::write(&cfg, r#"{"n": 7, "bone_scale": 0.8}"#).unwrap();
    let cfg = cfg.display().to_string();

    let a = p(dir, "a.jsonl");
    run(dir, &["synth", "--config", &cfg, "--out", &a]);
    assert_eq!(std::fs::read_to_string(&a).unwrap().lines().count(), 7);
    let m = manifest(&a);
    assert_eq!(m["config"]["n"], 7);
    assert_eq!(m["config"]["bone_scale"], 0.8);
    assert_eq!(m["config"]["pose_variation"], 0.3);

    let b = p(dir, "b.jsonl");
    run(dir, &["synth", "--config", &cfg, "--n", "4", "--out", &b]);
    assert_eq!(std::fs::read_to_string(&b).unwrap().lines().count(), 4);
    assert_eq!(manifest(&b)["config"]["n"], 4);
}

#[test]
fn bad_invocations_fail_with_one_line_class_diagnostic() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cases: Vec<(Vec<String>, &str)> = vec![
        (vec!["synth".into(), "--bogus".into(), "1".into()], "InvalidArgument"),
        (vec!["synth".into(), "--n".into(), "3".into(), "--n-poses".into(), "3".into()], "InvalidArgument"),
        (vec!["adapt".into(), "--data".into(), "x".into(), "--strategy".into(), "lora".into()], "InvalidArgument"),
        (vec!["eval".into(), "--pred".into(), p(dir, "missing.jsonl"), "--gt".into(), p(dir, "missing.jsonl"), "--out".into(), p(dir, "e.json")], "Io"),
    ];
    for (args, class) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let err = fail(dir, &args);
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error[{class}]")), "{args:?}: {err}");
    }

    let infant = p(dir, "infant.jsonl");
    run(dir, &["synth", "--n", "5", "--out", &infant]);
    let err = fail(dir, &["adapt", "--data", &infant, "--strategy", "ft", "--out", &p(dir, "ft.ckpt")]);
    assert!(err.starts_with("error[MissingBaseModel]"), "{err}");

    let bad_cfg = dir.join("bad.json");
    std::fs::write(&bad_cfg, r#"{"n": 3, "colour": "red"}"#).unwrap();
    let err = fail(dir, &["synth", "--config", bad_cfg.to_str().unwrap(), "--out", &p(dir, "s.jsonl")]);
    assert!(err.starts_with("error[ParseError]"), "{err}");
}

fn pipeline(dir: &Path, jobs: &str) -> (Vec<u8>, PathBuf) {
    let adult = p(dir, "adult.jsonl");
    let infant = p(dir, "infant.jsonl");
    let prior = p(dir, "prior.ckpt");
    let ca = p(dir, "ca.ckpt");
    let pred = p(dir, "pred.jsonl");
    let rep = p(dir, "eval.json");
    run(dir, &["synth", "--n", "60", "--seed", "11", "--out", &adult]);
    run(dir, &["synth", "--n", "24", "--seed", "12", "--bone-scale", "0.5", "--domain", "infant", "--id-prefix", "inf", "--out", &infant]);
    run(dir, &["train-prior", "--data", &adult, "--epochs", "20", "--batch", "30", "--width", "32", "--groups", "8", "--seed", "5", "--out", &prior]);
    run(dir, &["adapt", "--data", &infant, "--base", &prior, "--strategy", "ca", "--limit", "12", "--epochs", "10", "--seed", "6", "--out", &ca]);
    run(dir, &[
        "lift", "--prior", &ca, "--data", &infant, "--pool", &adult, "--iterations", "60", "--depth-freeze-until", "50",
        "--init-steps", "100", "--seed", "7", "--jobs", jobs, "--traces", &p(dir, "traces"), "--out", &pred,
    ]);
    run(dir, &["eval", "--pred", &pred, "--gt", &infant, "--out", &rep]);
    (std::fs::read(&rep).unwrap(), dir.join("traces"))
}

#[test]
fn pipeline_reports_are_byte_identical_across_runs_and_job_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let (ra, ta) = pipeline(a.path(), "1");
    let (rb, _) = pipeline(b.path(), "1");
    let (rc, tc) = pipeline(c.path(), "3");
    assert_eq!(ra, rb);
    assert_eq!(ra, rc);
    let trace = "inf-000003.csv";
    assert_eq!(std::fs::read(ta.join(trace)).unwrap(), std::fs::read(tc.join(trace)).unwrap());
    let v: Value = serde_json::from_slice(&ra).unwrap();
    assert!(v["settings"][0]["root_aligned"]["mean"].as_f64().unwrap() > 0.0);
}

#[test]
fn stats_writes_histograms() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let data = p(dir, "poses.jsonl");
    run(dir, &["synth", "--n", "30", "--out", &data]);
    let out = p(dir, "stats.json");
    run(dir, &["stats", "--data", &data, "--bins", "5", "--out", &out]);
    let bones = std::fs::read_to_string(dir.join("stats_bone_hist.csv")).unwrap();
    let angles = std::fs::read_to_string(dir.join("stats_angle_hist.csv")).unwrap();
    assert_eq!(bones.lines().count(), 1 + 16 * 5);
    assert!(angles.lines().count() > 1);
    assert!(json(&out).is_object());
}
