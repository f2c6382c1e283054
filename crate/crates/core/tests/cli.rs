//! End-to-end runs of the command-line entry point on temporary CSV files.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::Value;
use wedgenet::cli;
use wedgenet::net::ReluNetwork;
use wedgenet::DataMatrix;

fn write_data(dir: &Path, name: &str, n: usize, d: usize, c: usize, seed: u64) -> PathBuf {
    // Small deterministic pseudo-random cloud, no RNG crate needed.
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut next = || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    };
    let x = DMatrix::from_fn(n, d, |_, _| next());
    let y = DMatrix::from_fn(n, c, |i, o| (x[(i, 0)] * (o + 1) as f64).sin() + 0.3 * next());
    let path = dir.join(name);
    DataMatrix::new(x, y).unwrap().write_csv(&path).unwrap();
    path
}

fn run(args: &[&str]) -> i32 {
    let mut v = vec!["wedgenet"];
    v.extend_from_slice(args);
    cli::run(v)
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn train_convex_writes_consistent_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "d.csv", 20, 2, 1, 3);
    let out = dir.path().join("run");
    let code = run(&[
        "train-convex",
        data.to_str().unwrap(),
        "--variant",
        "l2-bias",
        "--lambda",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    for f in ["network.json", "solution.json", "manifest.json", "breaklines.svg"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    let sol = read_json(&out.join("solution.json"));
    let lasso = sol["objective"].as_f64().unwrap();
    let netobj = sol["network_objective"]["total"].as_f64().unwrap();
    assert!((lasso - netobj).abs() <= 1e-8 * lasso.abs());
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["command"], "train-convex");
    assert!(manifest["config_hash"].as_str().unwrap().len() == 64);

    // The saved network is loadable and eval agrees with the stored loss.
    let net = ReluNetwork::load(out.join("network.json")).unwrap();
    assert_eq!(net.input_dim(), 2);
    assert_eq!(run(&["eval", data.to_str().unwrap(), "--network", out.join("network.json").to_str().unwrap()]), 0);
}

#[test]
fn reruns_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "d.csv", 12, 3, 1, 5);
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("run{k}"));
        let code = run(&[
            "train-convex",
            data.to_str().unwrap(),
            "--variant",
            "l1-nobias",
            "--lambda",
            "0.1",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        outputs.push(std::fs::read(out.join("network.json")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn baseline_then_polish_then_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "d.csv", 30, 2, 1, 7);
    let out = dir.path().join("b");
    let code = run(&[
        "baseline",
        data.to_str().unwrap(),
        "--m",
        "8",
        "--lambda",
        "0.001",
        "--steps",
        "300",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let netp = out.join("baseline_network.json");
    assert!(netp.exists());

    let pout = dir.path().join("p");
    let code = run(&[
        "polish",
        data.to_str().unwrap(),
        "--network",
        netp.to_str().unwrap(),
        "--out",
        pout.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report = read_json(&pout.join("polish_report.json"));
    let neurons = report["neurons"].as_array().unwrap();
    assert_eq!(neurons.len(), 8);
    for n in neurons.iter().filter(|n| n.get("skipped").is_none()) {
        assert_eq!(n["selected"].as_array().unwrap().len(), 2);
        assert!(n["post_residual"].as_f64().unwrap() <= 1e-8);
    }

    let dout = dir.path().join("diag");
    assert_eq!(run(&["diagnose", data.to_str().unwrap(), "--probes", "500", "--out", dout.to_str().unwrap()]), 0);
    let diag = read_json(&dout.join("diagnostics.json"));
    let e = diag["chamber_diameter_estimate"].as_f64().unwrap();
    assert!((0.0..=2.0).contains(&e));
    assert!(diag["epsilon_2d"].is_number());
}

#[test]
fn vector_output_uses_all_label_columns() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "d.csv", 10, 2, 3, 9);
    let out = dir.path().join("v");
    let code = run(&[
        "train-convex",
        data.to_str().unwrap(),
        "--variant",
        "vector",
        "--label-cols",
        "3",
        "--lambda",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let net = ReluNetwork::load(out.join("network.json")).unwrap();
    assert_eq!(net.output_dim(), 3);
}

#[test]
fn bad_input_maps_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let data = write_data(dir.path(), "d.csv", 6, 2, 1, 1);
    let out = dir.path().join("x");
    // Unknown variant and a missing required flag are usage errors.
    assert_eq!(run(&["train-convex", data.to_str().unwrap(), "--variant", "nope", "--lambda", "1"]), 2);
    assert_eq!(run(&["train-convex", data.to_str().unwrap(), "--variant", "1d"]), 2);
    // One-dimensional ramps on planar data.
    assert_eq!(
        run(&["train-convex", data.to_str().unwrap(), "--variant", "1d", "--lambda", "1", "--out", out.to_str().unwrap()]),
        2
    );
    // Unreadable file.
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        run(&["train-convex", missing.to_str().unwrap(), "--variant", "l2-bias", "--lambda", "1", "--out", out.to_str().unwrap()]),
        3
    );
    // Non-converged solve still writes its best iterate.
    let out2 = dir.path().join("nc");
    let code = run(&[
        "train-convex",
        data.to_str().unwrap(),
        "--variant",
        "l2-bias",
        "--lambda",
        "0.001",
        "--max-iter",
        "1",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert!(code == 0 || code == 1);
    if code == 1 {
        assert!(out2.join("network.json").exists());
    }
}
