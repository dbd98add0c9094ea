use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use simrecon_core::io::StackFile;

const SMALL: &str = r#"{
    "optical": {"grid": 64},
    "scan": {"nx": 6, "ny": 6},
    "phantom": {"kind": "star", "spokes": 16},
    "iters": 10
}"#;

fn simrecon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simrecon"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn simrecon")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn count(path: &Path) -> usize {
    StackFile::read(path).unwrap().count()
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(simrecon(&["simulate", "--config", &cfg, "--seed", "5", "--out-dir", p(&a)]));
    ok(simrecon(&["simulate", "--config", &cfg, "--seed", "5", "--out-dir", p(&b)]));
    ok(simrecon(&["simulate", "--config", &cfg, "--seed", "6", "--out-dir", p(&c)]));
    for name in ["measurements.sims", "patterns.sims", "dmd.sims", "object.sims", "psf_det.sims", "manifest.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
    assert_ne!(fs::read(a.join("measurements.sims")).unwrap(), fs::read(c.join("measurements.sims")).unwrap());
    assert_eq!(count(&a.join("measurements.sims")), 36);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["optical"]["grid"], 64);
    assert_eq!(manifest["star"]["spokes"], 16);
}

#[test]
fn default_config_writes_400_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("std");
    ok(simrecon(&["simulate", "--out-dir", p(&out)]));
    assert_eq!(count(&out.join("measurements.sims")), 400);
    assert_eq!(count(&out.join("patterns.sims")), 400);
}

#[test]
fn multispot_six_by_six_writes_36_measurements() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "m.json",
        r#"{"optical": {"grid": 96}, "scan": {"nx": 6, "ny": 6},
            "pattern": {"mode": "multispot", "period_steps": 6},
            "phantom": {"kind": "star", "spokes": 8}}"#,
    );
    let out = dir.path().join("ms");
    ok(simrecon(&["simulate", "--config", &cfg, "--out-dir", p(&out)]));
    assert_eq!(count(&out.join("measurements.sims")), 36);
}

#[test]
fn reconstruct_mtf_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let sim = dir.path().join("sim");
    ok(simrecon(&["simulate", "--config", &cfg, "--out-dir", p(&sim)]));

    let rec = dir.path().join("rec");
    ok(simrecon(&[
        "reconstruct",
        "--input",
        p(&sim.join("measurements.sims")),
        "--out-dir",
        p(&rec),
        "--pipeline",
        "pe-sims-pr",
        "--xi",
        "1e-6",
    ]));
    for name in ["i_sims.sims", "i_pr.sims", "patterns_est.sims", "alpha.sims", "widefield.sims", "diagnostics.json"] {
        assert!(rec.join(name).exists(), "{name}");
    }
    assert_eq!(count(&rec.join("patterns_est.sims")), 36);
    let diag: serde_json::Value = serde_json::from_slice(&fs::read(rec.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["status"], "ok");
    assert_eq!(diag["traces"].as_array().unwrap().len(), 36);
    assert_eq!(diag["traces"][0].as_array().unwrap().len(), 11);
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(rec.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["regularizers"]["xi"], 1e-6);
    assert_eq!(manifest["config"]["pipeline"], "pe-sims-pr");

    // perfect star: contrast near one, reduced only by pixel area-averaging
    let csv_path = dir.path().join("object_mtf.csv");
    ok(simrecon(&[
        "mtf",
        "--input",
        p(&sim.join("object.sims")),
        "--out",
        p(&csv_path),
    ]));
    let csv = fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "radius_um,period_um,period_over_abbe,contrast");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 481);
    assert!((rows[0][2] - 0.3).abs() < 1e-6 && (rows[480][2] - 1.5).abs() < 1e-6);
    assert!(rows.iter().filter(|r| r[2] >= 0.6).all(|r| r[3] > 0.7 && r[3] < 1.05), "{csv}");

    let table = ok(simrecon(&[
        "compare",
        p(&rec.join("widefield.sims")),
        p(&rec.join("i_sims.sims")),
        p(&rec.join("i_pr.sims")),
        "--out",
        p(&dir.path().join("table.csv")),
    ]));
    assert_eq!(table.lines().count(), 4, "{table}");
    assert!(table.lines().nth(1).unwrap().contains("1.00x"), "{table}");
    let table_csv = fs::read_to_string(dir.path().join("table.csv")).unwrap();
    assert!(table_csv.starts_with("image,resolution_abbe,enhancement\nwidefield,"));

    // ground-truth ablation skips pattern estimation
    let gt = dir.path().join("gt");
    ok(simrecon(&[
        "reconstruct",
        "--input",
        p(&sim.join("measurements.sims")),
        "--ground-truth-patterns",
        p(&sim.join("patterns.sims")),
        "--out-dir",
        p(&gt),
    ]));
    assert!(gt.join("i_sims.sims").exists());
    assert!(!gt.join("patterns_est.sims").exists());
    assert!(!gt.join("i_pr.sims").exists());
}

#[test]
fn estimate_patterns_writes_stack_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "c.json", SMALL);
    let sim = dir.path().join("sim");
    ok(simrecon(&["simulate", "--config", &cfg, "--out-dir", p(&sim)]));
    let est = dir.path().join("est");
    ok(simrecon(&["estimate-patterns", "--input", p(&sim.join("measurements.sims")), "--out-dir", p(&est)]));
    assert_eq!(count(&est.join("patterns_est.sims")), 36);
    assert!(est.join("o_est.sims").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", r#"{"optical": {"na": -1}}"#);
    let out = simrecon(&["simulate", "--config", &bad, "--out-dir", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let missing = simrecon(&["simulate", "--config", p(&dir.path().join("nope.json"))]);
    assert_eq!(missing.status.code(), Some(3));

    let corrupt = dir.path().join("corrupt.sims");
    fs::write(&corrupt, b"SIMS\x01\x00garbage").unwrap();
    let out = simrecon(&["reconstruct", "--input", p(&corrupt), "--out-dir", p(&dir.path().join("y"))]);
    assert_eq!(out.status.code(), Some(3));

    let cfg = write_config(dir.path(), "c.json", SMALL);
    let sim = dir.path().join("sim");
    ok(simrecon(&["simulate", "--config", &cfg, "--out-dir", p(&sim)]));
    let diverge = write_config(
        dir.path(),
        "d.json",
        &SMALL.replace(r#""iters": 10"#, r#""iters": 10, "step": 1e6"#),
    );
    let rec = dir.path().join("rec");
    let out = simrecon(&[
        "reconstruct",
        "--input",
        p(&sim.join("measurements.sims")),
        "--config",
        &diverge,
        "--out-dir",
        p(&rec),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let diag: serde_json::Value = serde_json::from_slice(&fs::read(rec.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(diag["status"], "failed");
    assert!(diag["error"].as_str().unwrap().contains("diverged"));

    // image without star metadata
    let lonely = dir.path().join("lonely");
    fs::create_dir(&lonely).unwrap();
    fs::copy(sim.join("object.sims"), lonely.join("object.sims")).unwrap();
    let out = simrecon(&["mtf", "--input", p(&lonely.join("object.sims"))]);
    assert_eq!(out.status.code(), Some(3));
    let two = write_config(dir.path(), "t.json", r#"{"optical": {"grid": 64}, "scan": {"nx": 2, "ny": 2}, "phantom": {"kind": "two-point", "separation": 0.3}}"#);
    let tp = dir.path().join("tp");
    ok(simrecon(&["simulate", "--config", &two, "--out-dir", p(&tp)]));
    let out = simrecon(&["mtf", "--input", p(&tp.join("object.sims"))]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}
