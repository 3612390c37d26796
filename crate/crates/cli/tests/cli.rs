use std::path::Path;
use std::process::{Command, Output};

fn dbk(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dbk")).args(args).current_dir(dir).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = dbk(dir, args);
    assert!(out.status.success(), "dbk {args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    (headers, rows)
}

fn synth(dir: &Path, n: &str, noise: &str, seed: &str, out: &str) {
    ok(dir, &["synth", "--kind", "step1d", "--n", n, "--noise-var", noise, "--seed", seed, "--out", out]);
}

/// Asserts a failure with the given exit code and a one-line JSON error.
fn assert_error(out: &Output, code: i32) -> serde_json::Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    let v: serde_json::Value = serde_json::from_str(stderr.trim()).unwrap();
    assert_eq!(v["code"], code);
    v
}

#[test]
fn synth_is_reproducible_and_seed_sensitive() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "100", "0.01", "0", "a.csv");
    synth(p, "100", "0.01", "0", "b.csv");
    synth(p, "100", "0.01", "1", "c.csv");
    let a = std::fs::read(p.join("a.csv")).unwrap();
    assert_eq!(a, std::fs::read(p.join("b.csv")).unwrap());
    let (headers, rows) = read_csv(&p.join("a.csv"));
    assert_eq!(headers, ["x0", "y", "f_gt"]);
    assert_eq!(rows.len(), 100);
    let (_, other) = read_csv(&p.join("c.csv"));
    assert!(rows.iter().zip(&other).any(|(u, v)| u[1] != v[1]));
}

#[test]
fn noiseless_synth_targets_equal_truth() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), "50", "0", "3", "a.csv");
    let (_, rows) = read_csv(&d.path().join("a.csv"));
    assert!(rows.iter().all(|r| r[1] == r[2]));
}

#[test]
fn invalid_flags_exit_two() {
    let d = tempfile::tempdir().unwrap();
    let out = dbk(d.path(), &["synth", "--kind", "step1d", "--n", "10", "--noise-var", "-1", "--out", "a.csv"]);
    assert_error(&out, 2);
    let out = dbk(d.path(), &["synth", "--kind", "nope", "--n", "10", "--noise-var", "0", "--out", "a.csv"]);
    assert_error(&out, 2);
    let out = dbk(d.path(), &["train"]);
    assert_error(&out, 2);
}

#[test]
fn io_failure_exits_one() {
    let d = tempfile::tempdir().unwrap();
    let out =
        dbk(d.path(), &["synth", "--kind", "step1d", "--n", "10", "--noise-var", "0", "--out", "missing/dir/a.csv"]);
    assert_error(&out, 1);
}

#[test]
fn training_improves_the_objective_and_logs_progress() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "500", "0.01", "0", "train.csv");
    std::fs::write(
        p.join("cfg.json"),
        r#"{"version": 1, "model": "dbk_exact", "rank": 16, "hidden": [32, 32], "max_iters": 200, "eval_every": 20}"#,
    )
    .unwrap();
    ok(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "model.json"]);
    assert!(p.join("model.json").exists());
    let log = std::fs::read_to_string(p.join("model.log.jsonl")).unwrap();
    let entries: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(entries.len(), 10);
    let first = entries[0]["objective"].as_f64().unwrap();
    let last = entries.last().unwrap()["objective"].as_f64().unwrap();
    assert!(last > first, "{first} -> {last}");
    let run: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(p.join("model.run.json")).unwrap()).unwrap();
    assert_eq!(run["threads"], 1);
    assert_eq!(run["iterations"], 200);
}

#[test]
fn patience_without_validation_is_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "50", "0.01", "0", "train.csv");
    std::fs::write(p.join("cfg.json"), r#"{"version": 1, "model": "dbk_exact", "patience": 200}"#).unwrap();
    let out = dbk(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "m.json"]);
    let err = assert_error(&out, 2);
    assert!(err["message"].as_str().unwrap().contains("validation"));
    assert!(!p.join("m.json").exists());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "50", "0.01", "0", "train.csv");
    std::fs::write(p.join("cfg.json"), r#"{"version": 1, "model": "dbk_exact", "learning_rate": 0.1}"#).unwrap();
    let out = dbk(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "m.json"]);
    assert_error(&out, 2);
}

#[test]
fn near_floor_noise_interpolates_training_targets() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "40", "0.01", "2", "train.csv");
    // With the noise pinned near its floor the likelihood rewards fitting every point.
    std::fs::write(
        p.join("cfg.json"),
        r#"{"version": 1, "model": "dbk_exact", "rank": 64, "hidden": [64, 64], "max_iters": 3000, "noise_init": 1.1e-6,
            "learn_noise": false, "optimizer": {"learning_rate": 1e-2}}"#,
    )
    .unwrap();
    ok(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "m.json"]);
    ok(p, &["predict", "--model", "m.json", "--data", "train.csv", "--out", "preds.csv"]);
    let (headers, rows) = read_csv(&p.join("preds.csv"));
    assert_eq!(headers, ["row_index", "mean", "variance", "target", "nll"]);
    for r in &rows {
        assert!((r[1] - r[3]).abs() < 1e-2, "mean {} vs target {}", r[1], r[3]);
    }
}

#[test]
fn predict_without_target_column_and_eval_composes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "80", "0.01", "0", "train.csv");
    std::fs::write(
        p.join("cfg.json"),
        r#"{"version": 1, "model": "dbk_svi", "rank": 8, "hidden": [16], "max_iters": 20, "batch_size": 16}"#,
    )
    .unwrap();
    ok(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "m.json"]);
    std::fs::write(p.join("inputs.csv"), "x0\n-0.5\n0.0\n0.5\n").unwrap();
    ok(p, &["predict", "--model", "m.json", "--data", "inputs.csv", "--out", "p1.csv"]);
    let (headers, rows) = read_csv(&p.join("p1.csv"));
    assert_eq!(headers, ["row_index", "mean", "variance"]);
    assert_eq!(rows.len(), 3);
    ok(p, &["predict", "--model", "m.json", "--data", "train.csv", "--out", "p2.csv"]);
    ok(p, &["eval", "--preds", "p2.csv", "--out", "metrics.json"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("metrics.json")).unwrap()).unwrap();
    assert!(m["mae"].as_f64().unwrap() <= m["rmse"].as_f64().unwrap());
    assert_eq!(m["n_test"], 80);
    // eval without a target column is a validation error
    let out = dbk(p, &["eval", "--preds", "p1.csv", "--out", "x.json"]);
    assert_error(&out, 2);
}

#[test]
fn eval_of_exact_means_at_unit_density_has_zero_nll() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    let v = 1.0 / std::f64::consts::TAU;
    let mut text = String::from("row_index,mean,variance,target\n");
    for (i, y) in [0.3, -1.2, 4.0, 0.0].iter().enumerate() {
        text.push_str(&format!("{i},{y},{v},{y}\n"));
    }
    std::fs::write(p.join("preds.csv"), text).unwrap();
    ok(p, &["eval", "--preds", "preds.csv", "--out", "m.json"]);
    let m: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p.join("m.json")).unwrap()).unwrap();
    assert!(m["nll"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(m["mae"], 0.0);
    assert_eq!(m["rmse"], 0.0);
}

#[test]
fn benchmark_writes_one_line_per_cell_and_resumes() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    std::fs::write(
        p.join("bench.json"),
        r#"{"version": 1, "sizes": [100, 1000], "methods": ["dbk_exact", "dbk_svi"], "seeds": [0], "n_test": 100,
            "architecture": {"rank": 8, "hidden": [16]}, "train": {"max_iters": 10, "eval_every": 5, "batch_size": 64}}"#,
    )
    .unwrap();
    ok(p, &["benchmark", "--config", "bench.json", "--out", "out"]);
    let results = std::fs::read_to_string(p.join("out/results.jsonl")).unwrap();
    assert_eq!(results.lines().count(), 4);
    ok(p, &["benchmark", "--config", "bench.json", "--out", "out"]);
    assert_eq!(std::fs::read_to_string(p.join("out/results.jsonl")).unwrap(), results);
    let (headers, rows) = {
        let mut r = csv::Reader::from_path(p.join("out/summary.csv")).unwrap();
        (r.headers().unwrap().clone(), r.records().count())
    };
    assert_eq!(&headers[0], "method");
    assert_eq!(rows, 4);
}

#[test]
fn benchmark_requires_version() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bench.json"), r#"{"sizes": [10]}"#).unwrap();
    let out = dbk(d.path(), &["benchmark", "--config", "bench.json", "--out", "out"]);
    assert_error(&out, 2);
}

#[test]
fn kernel_grid_for_dense_model_is_symmetric() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path();
    synth(p, "60", "0.01", "0", "train.csv");
    std::fs::write(p.join("cfg.json"), r#"{"version": 1, "model": "dense_rbf", "max_iters": 5}"#).unwrap();
    ok(p, &["train", "--config", "cfg.json", "--data", "train.csv", "--out", "m.json"]);
    ok(p, &["kernel-grid", "--model", "m.json", "--grid", "-1:1:7", "--out", "k.csv"]);
    let (headers, rows) = read_csv(&p.join("k.csv"));
    assert_eq!(headers, ["x1", "x2", "k"]);
    assert_eq!(rows.len(), 49);
    let k = |i: usize, j: usize| rows[i * 7 + j][2];
    for i in 0..7 {
        for j in 0..7 {
            assert_eq!(k(i, j), k(j, i));
        }
        assert!((k(i, i) - k(0, 0)).abs() < 1e-12);
    }
}
