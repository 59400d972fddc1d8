use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::{json, Value};

fn springcam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_springcam"))
        .args(args)
        .output()
        .expect("running springcam")
}

fn ok(args: &[&str]) -> Output {
    let out = springcam(args);
    assert!(
        out.status.success(),
        "springcam {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_manifest(dir: &Path, manifest: Value) -> PathBuf {
    let path = dir.join("manifest.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    path
}

/// Short sequences and a few epochs.
fn small_manifest() -> Value {
    json!({
        "seed": 11,
        "patterns": ["C", "D"],
        "eval_patterns": ["D"],
        "duration": 6.0,
        "rate": 120.0,
        "motion": { "strict_duration": false },
        "train": {
            "learning_rate": 3e-3,
            "final_lr_factor": 0.1,
            "epochs": 5,
            "batch_size": 64,
            "split": [0.7, 0.2, 0.1],
            "seed": 3
        },
        "train_gate": 10.0,
        "noise_levels": [0.0, 0.03, 0.05, 0.1],
        "outlier_ratios": [0.0, 0.01],
        "trials": 1
    })
}

fn read_rows(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_manifest(dir.path(), small_manifest());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", s(&cfg), "--out", s(&a), "simulate"]);
    ok(&["--config", s(&cfg), "--out", s(&b), "simulate"]);
    let mut names: Vec<_> = std::fs::read_dir(a.join("sequences")).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 6);
    for n in names {
        let x = std::fs::read(a.join("sequences").join(&n)).unwrap();
        let y = std::fs::read(b.join("sequences").join(&n)).unwrap();
        assert!(x == y, "{n:?} differs");
    }

    // a different seed changes the data
    let c = dir.path().join("c");
    ok(&["--config", s(&cfg), "--seed", "12", "--out", s(&c), "simulate"]);
    let x = std::fs::read(a.join("sequences/train_00_C_camera.csv")).unwrap();
    let y = std::fs::read(c.join("sequences/train_00_C_camera.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn full_rate_pattern_a_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_manifest(
        dir.path(),
        json!({ "patterns": ["A"], "eval_patterns": ["A"], "trials": 1 }),
    );
    ok(&["--config", s(&cfg), "--out", s(dir.path()), "simulate"]);
    let seq = dir.path().join("sequences");
    let text = std::fs::read_to_string(seq.join("train_00_A_base.csv")).unwrap();
    assert!(text.starts_with("t,tx,ty,tz,qx,qy,qz,qw,ax,ay,az,wx,wy,wz,alx,aly,alz\n"));
    let base = read_rows(&seq.join("train_00_A_base.csv"));
    let camera = read_rows(&seq.join("train_00_A_camera.csv"));
    assert_eq!(base.len(), 10_800);
    assert_eq!(camera.len(), 10_800);
    for row in &base {
        assert_eq!(&row[4..8], &base[0][4..8]);
    }
    assert!((base[10_799][0] - 10_799.0 / 360.0).abs() < 1e-12);
}

#[test]
fn train_writes_weights_and_loss_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_manifest(dir.path(), small_manifest());
    let root = dir.path();
    ok(&["--config", s(&cfg), "--out", s(root), "simulate"]);
    ok(&["--config", s(&cfg), "--out", s(root), "train"]);
    let loss = std::fs::read_to_string(root.join("loss.csv")).unwrap();
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("epoch,train_l1,val_l1"));
    assert_eq!(lines.count(), 6);
    let weights = read_json(&root.join("dfn.json"));
    assert_eq!(weights["format"], "dfn-v1");
    assert_eq!(weights["activation"], "relu");

    // same data and seed, same network
    let again = root.join("again");
    ok(&["--config", s(&cfg), "--out", s(&again), "train", "--data", s(&root.join("sequences"))]);
    assert_eq!(
        std::fs::read(root.join("dfn.json")).unwrap(),
        std::fs::read(again.join("dfn.json")).unwrap()
    );
}

#[test]
fn failed_gate_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = small_manifest();
    m["train_gate"] = json!(1e-9);
    let cfg = write_manifest(dir.path(), m);
    ok(&["--config", s(&cfg), "--out", s(dir.path()), "simulate"]);
    let out = springcam(&["--config", s(&cfg), "--out", s(dir.path()), "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("gate"));
    // the weights are still written
    assert!(dir.path().join("dfn.json").exists());
}

#[test]
fn missing_inputs_are_clean_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("nothing");
    let out = springcam(&["--out", s(dir.path()), "train", "--data", s(&empty)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nothing"), "{err}");
    assert!(!err.contains("panicked"));

    let gt = dir.path().join("gt.csv");
    std::fs::write(&gt, "t,tx,ty,tz,qx,qy,qz,qw\n0,0,0,0,0,0,0,1\n").unwrap();
    let weights = dir.path().join("missing.json");
    let out = springcam(&["--out", s(dir.path()), "estimate", "--gt", s(&gt), "--weights", s(&weights)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("missing.json") && err.contains("weights"), "{err}");
    assert!(!err.contains("panicked"));

    let bad = write_manifest(dir.path(), json!({ "trials": 0 }));
    let out = springcam(&["--config", s(&bad), "simulate"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn evaluate_identical_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_manifest(dir.path(), small_manifest());
    ok(&["--config", s(&cfg), "--out", s(dir.path()), "simulate"]);
    let base = dir.path().join("sequences/eval_00_D_base.csv");
    let solution = dir.path().join("solution.json");
    std::fs::write(
        &solution,
        json!({ "lambda": 0.37, "gravity_vo": [0.0, 0.0, -9.81],
                "perturbation": { "true_lambda": 0.37, "gravity_vo_true": [0.0, 0.0, -1.0] } })
        .to_string(),
    )
    .unwrap();
    ok(&["--out", s(dir.path()), "evaluate", "--est", s(&base), "--gt", s(&base), "--solution", s(&solution)]);
    let m = read_json(&dir.path().join("metrics.json"));
    for key in ["mean", "median", "std", "max"] {
        assert!(m["ape"][key].as_f64().unwrap().abs() < 1e-9, "{key}: {}", m["ape"][key]);
    }
    assert_eq!(m["err_lambda"].as_f64(), Some(0.0));
    assert_eq!(m["err_g_deg"].as_f64(), Some(0.0));
    let first = std::fs::read(dir.path().join("metrics.json")).unwrap();

    // without a solution there is no scale to score
    ok(&["--out", s(dir.path()), "evaluate", "--est", s(&base), "--gt", s(&base)]);
    let m = read_json(&dir.path().join("metrics.json"));
    assert!(m["err_lambda"].is_null());
    assert!(m["err_g_deg"].as_f64().unwrap() < 1e-6);

    ok(&["--out", s(dir.path()), "evaluate", "--est", s(&base), "--gt", s(&base), "--solution", s(&solution)]);
    assert_eq!(first, std::fs::read(dir.path().join("metrics.json")).unwrap());
}

/// Desk-scale data and the default tiny network, then a noiseless estimate
/// of an evaluation sequence and its evaluation.
#[test]
fn desk_scale_train_estimate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&["--out", s(root), "simulate"]);
    let start = Instant::now();
    ok(&["--out", s(root), "train"]);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "training took {secs:.1} s");
    let weights = root.join("dfn.json");

    let gt = root.join("sequences/eval_00_C_camera.csv");
    let est_dir = root.join("estimate");
    ok(&["--out", s(&est_dir), "estimate", "--gt", s(&gt), "--weights", s(&weights)]);
    let sol = read_json(&est_dir.join("solution.json"));
    assert_eq!(sol["converged"], json!(true));
    assert!(sol["knots"].as_str() == Some("knots.csv"));
    let est = read_rows(&est_dir.join("base_estimate.csv"));
    let vo = read_rows(&est_dir.join("vo.csv"));
    let truth = read_rows(&gt);
    assert_eq!(est.len(), truth.len());
    for ((e, v), t) in est.iter().zip(&vo).zip(&truth) {
        assert_eq!(e[0], t[0]);
        assert_eq!(v[0], t[0]);
    }

    ok(&[
        "--out",
        s(&est_dir),
        "evaluate",
        "--est",
        s(&est_dir.join("base_estimate.csv")),
        "--gt",
        s(&root.join("sequences/eval_00_C_base.csv")),
        "--solution",
        s(&est_dir.join("solution.json")),
    ]);
    let m = read_json(&est_dir.join("metrics.json"));
    assert!(m["err_lambda"].as_f64().unwrap() < 0.05, "{m}");
    assert!(m["err_g_deg"].as_f64().unwrap() < 2.0, "{m}");
    assert!(m["ape"]["mean"].as_f64().unwrap() < 0.05, "{m}");

    // estimating from the written VO track directly gives a solution too
    let vo_dir = root.join("from_vo");
    ok(&["--out", s(&vo_dir), "estimate", "--vo", s(&est_dir.join("vo.csv")), "--weights", s(&weights)]);
    let est2 = read_rows(&vo_dir.join("base_estimate.csv"));
    assert_eq!(est2.len(), vo.len());
}

#[test]
fn reproduce_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = small_manifest();
    m["duration"] = json!(10.0);
    m["rate"] = json!(100.0);
    m["train"]["epochs"] = json!(40);
    let cfg = write_manifest(dir.path(), m);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["--config", s(&cfg), "--out", s(&a), "reproduce"]);
    let noise = std::fs::read_to_string(a.join("table_noise.csv")).unwrap();
    assert_eq!(noise.lines().count(), 5);
    assert!(noise.starts_with("noise,ape_mean,ape_median,ape_std,err_lambda,err_g_deg"));
    let text = std::fs::read_to_string(a.join("table_noise.txt")).unwrap();
    for level in ["0%", "3%", "5%", "10%"] {
        assert!(text.lines().any(|l| l.starts_with(level)), "{text}");
    }
    assert_eq!(std::fs::read_to_string(a.join("table_outliers.csv")).unwrap().lines().count(), 3);
    let tables = read_json(&a.join("tables.json"));
    assert_eq!(tables["noise"]["rows"].as_array().unwrap().len(), 4);

    ok(&["--config", s(&cfg), "--out", s(&b), "reproduce", "--weights", s(&a.join("dfn.json"))]);
    for f in ["table_noise.csv", "table_outliers.csv", "tables.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}
