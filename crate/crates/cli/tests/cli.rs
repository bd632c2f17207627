use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_slowctl"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/configs").join(name)
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--out").arg(out).output().unwrap()
}

fn error_kind(out: &Output) -> String {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap_or_else(|_| panic!("stderr not JSON: {line}"));
    assert!(v["message"].is_string());
    v["error"].as_str().unwrap().to_string()
}

#[test]
fn orbit_writes_one_file_per_level_with_period_two_pi() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = bundled("example1.json");
    let out = run(&["orbit", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_dir(dir.path().join("orbits")).unwrap().count(), 20);
    let index = std::fs::read_to_string(dir.path().join("orbits.csv")).unwrap();
    let periods: Vec<f64> = index.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(periods.len(), 20);
    for t in periods {
        assert!((t - std::f64::consts::TAU).abs() <= 1e-6, "{t}");
    }
}

#[test]
fn simulate_without_certificate_reports_missing_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["simulate", "--dual", dir.path().join("absent.txt").to_str().unwrap()], dir.path());
    assert_eq!(error_kind(&out), "missing-certificate");
}

#[test]
fn bad_configs_are_rejected_with_kind() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(error_kind(&run(&["orbit", "--config", empty.to_str().unwrap()], dir.path())), "parse");

    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(bundled("example2.json")).unwrap()).unwrap();
    v["z0"] = serde_json::json!([-2.5]);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, v.to_string()).unwrap();
    assert_eq!(error_kind(&run(&["orbit", "--config", bad.to_str().unwrap()], dir.path())), "validation");
}

#[test]
fn repeated_solves_are_bit_identical() {
    let cfg = bundled("example1.json");
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let out = run(&["solve", "--config", cfg.to_str().unwrap(), "--grid", "6", "--seed", "3"], d.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for name in ["dual.txt", "certificate.csv", "exchange_history.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
}
