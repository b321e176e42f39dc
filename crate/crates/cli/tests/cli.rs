use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_frustration"))
}

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn version_flag() {
    let out = run(&["--version"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains(env!("CARGO_PKG_VERSION")));
}

#[test]
fn simulate_then_audit() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let cfg = assets().join("runs/custom_intervention.json");
    let out = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--steps",
        "600",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    assert!(text(&out.stdout).starts_with("half_attention-corridor-3:"));
    for f in ["events.csv", "trace.csv", "summary.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let audited = run(&["audit", "--run", dir.to_str().unwrap()]);
    assert!(audited.status.success(), "{}", text(&audited.stderr));
    assert!(text(&audited.stdout).contains("0 mismatches"));
}

#[test]
fn repeated_simulations_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = assets().join("runs/empty_mind.json");
    let outs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("r{i}"))).collect();
    for d in &outs {
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "800", "--out", d.to_str().unwrap()]);
        assert!(o.status.success());
    }
    for f in ["events.csv", "trace.csv", "summary.json"] {
        assert_eq!(fs::read(outs[0].join(f)).unwrap(), fs::read(outs[1].join(f)).unwrap(), "{f}");
    }
}

#[test]
fn tampered_run_fails_the_audit() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("run");
    let cfg = assets().join("runs/baseline.json");
    assert!(run(&["simulate", "--config", cfg.to_str().unwrap(), "--steps", "300", "--out", dir.to_str().unwrap()])
        .status
        .success());
    let events = fs::read_to_string(dir.join("events.csv")).unwrap();
    let kept: Vec<&str> = events.lines().take(events.lines().count() - 1).collect();
    fs::write(dir.join("events.csv"), kept.join("\n") + "\n").unwrap();
    let out = run(&["audit", "--run", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn invalid_config_exits_2_with_location() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("w.json"), r#"{ "map": ["S.R"] }"#).unwrap();
    let cfg = tmp.path().join("run.json");
    fs::write(&cfg, "{\n  \"world\": \"w.json\",\n  \"steps\": 10,\n  \"learning\": { \"epsilon\": 2.0 }\n}").unwrap();
    let out = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = text(&out.stderr);
    assert!(err.contains("run.json:4:"), "{err}");
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn validate_only_does_not_run() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("o");
    let cfg = assets().join("runs/baseline.json");
    let out =
        run(&["simulate", "--validate-only", "--config", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(!out_dir.exists());
    let m = assets().join("canonical_matrix.json");
    let out =
        run(&["experiment", "--matrix", m.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--validate-only"]);
    assert!(out.status.success());
    assert!(text(&out.stdout).contains("320 cells"));
}

#[test]
fn experiment_with_missing_world_exits_nonzero_but_keeps_cells() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("w.json"), r#"{ "map": ["S...R"] }"#).unwrap();
    let m = tmp.path().join("m.json");
    fs::write(
        &m,
        r#"{ "interventions": ["baseline", "skeptic"], "worlds": ["w.json", "gone.json"], "seeds": 2, "steps": 50 }"#,
    )
    .unwrap();
    let dir = tmp.path().join("o");
    let out = run(&["experiment", "--matrix", m.to_str().unwrap(), "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let report = fs::read_to_string(dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().filter(|l| l.contains(",ok,") && !l.contains("median")).count(), 4);
    assert_eq!(report.lines().filter(|l| l.contains("failed:")).count(), 4);
}

#[test]
fn sweep_writes_seed_and_total_rows() {
    let tmp = TempDir::new().unwrap();
    let policy = tmp.path().join("p.json");
    fs::write(&policy, r#"{ "thresholds": [0.0, 0.5, null], "seeds": 3, "episodes": 5 }"#).unwrap();
    let world = assets().join("worlds/scripted_hazard.json");
    let dir = tmp.path().join("s");
    let out = run(&[
        "sweep-threshold",
        "--world",
        world.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let csv = fs::read_to_string(dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * 3 + 3);
    assert!(csv.lines().last().unwrap().starts_with("inf,total,0,0,"));
}

#[test]
fn sweep_rejects_unsorted_thresholds() {
    let tmp = TempDir::new().unwrap();
    let policy = tmp.path().join("p.json");
    fs::write(&policy, "{\n  \"seeds\": 2,\n  \"thresholds\": [0.5, 0.1]\n}").unwrap();
    let world = assets().join("worlds/scripted_hazard.json");
    let out = run(&[
        "sweep-threshold",
        "--world",
        world.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--out",
        tmp.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(text(&out.stderr).contains("p.json:3:"));
}
