use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn config(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(rel)
}

fn run(sub: &str, cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaklearn"))
        .arg(sub)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn verdicts(report: &Value) -> Vec<(String, bool)> {
    report["verdicts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| (v["name"].as_str().unwrap().to_string(), v["passed"].as_bool().unwrap()))
        .collect()
}

#[test]
fn exit_codes_follow_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("verify-theorem1", "verify-theorem1/atoms_xsq_relu.json", 0),
        ("verify-theorem1", "verify-theorem1/independent_y.json", 2),
        ("verify-theorem2", "verify-theorem2/linear_3atoms.json", 0),
        ("fisher-audit", "fisher-audit/collinear_features.json", 2),
    ];
    for (sub, rel, want) in cases {
        let out = dir.path().join("report.json");
        let o = run(sub, &config(rel), &out, &[]);
        assert_eq!(o.status.code(), Some(want), "{rel}: {}", String::from_utf8_lossy(&o.stderr));
        let report: Value = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
        assert_eq!(report["passed"].as_bool(), Some(want == 0));
        assert_eq!(report["command"].as_str(), Some(sub));
    }
}

#[test]
fn unknown_config_key_is_rejected_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(config("verify-theorem1/atoms_xsq_relu.json")).unwrap()).unwrap();
    v["architecture"]["widthz"] = Value::from(3);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run("verify-theorem1", &cfg, &dir.path().join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("architecture") && err.contains("widthz"), "{err}");
}

#[test]
fn zero_epsilon_contrast_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.json");
    let mut v: Value =
        serde_json::from_str(&std::fs::read_to_string(config("proposition-contrast/proposition_contrast.json")).unwrap()).unwrap();
    v["epsilon"] = Value::from(0.0);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let o = run("proposition-contrast", &cfg, &dir.path().join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = run("fisher-audit", &dir.path().join("nope.json"), &dir.path().join("r.json"), &[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn seed_override_keeps_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("verify-theorem2/linear_3atoms.json");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    assert_eq!(run("verify-theorem2", &cfg, &a, &[]).status.code(), Some(0));
    assert_eq!(run("verify-theorem2", &cfg, &b, &["--seed-override", "99"]).status.code(), Some(0));
    let ra: Value = serde_json::from_str(&std::fs::read_to_string(a).unwrap()).unwrap();
    let rb: Value = serde_json::from_str(&std::fs::read_to_string(b).unwrap()).unwrap();
    assert_eq!(verdicts(&ra), verdicts(&rb));
}

#[test]
fn tables_are_written_next_to_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.json");
    let o = run("verify-theorem1", &config("verify-theorem1/atoms_xsq_relu.json"), &out, &[]);
    assert_eq!(o.status.code(), Some(0));
    let csvs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".csv"))
        .collect();
    assert!(!csvs.is_empty());
    for name in csvs {
        assert!(name.starts_with("t1."), "{name}");
        let mut r = csv::Reader::from_path(dir.path().join(&name)).unwrap();
        assert!(!r.headers().unwrap().is_empty());
        assert!(r.records().count() > 0, "{name} is empty");
    }
}

#[test]
fn report_goes_to_stdout_without_out() {
    let o = Command::new(env!("CARGO_BIN_EXE_weaklearn"))
        .args(["verify-theorem1", "--config"])
        .arg(config("verify-theorem1/atoms_xsq_relu.json"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["schema_version"].as_u64(), Some(1));
}
