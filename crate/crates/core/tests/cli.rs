//! End-to-end runs of the `sgd-infer` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use sgd_infer::models::{gen_design, gen_stream, DesignKind, ModelKind};

fn sgd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgd-infer"))
        .args(args)
        .env("RAYON_NUM_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sgd(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_writes_long_csv_and_run_dir() {
    let args = [
        "simulate", "--model", "linear", "--design", "identity", "--d", "5", "--n", "100000", "--reps", "10", "--seed", "7",
    ];
    let csv = ok(&args);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "n,estimator,metric,value,se,reps,absent");
    assert!(lines.clone().count() > 10);
    assert!(csv.contains(",LUGSAIL,"));
    assert_eq!(csv, ok(&args));

    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&[&args[..], &["--out", path(&run)]].concat());
    assert_eq!(fs::read_to_string(run.join("metrics.csv")).unwrap(), csv);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["replications"], 10);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn regions_on_fixed_estimate() {
    let dir = tempfile::tempdir().unwrap();
    let fit = dir.path().join("fit.json");
    let doc = json!({
        "theta_hat": [0.0, 0.0],
        "n": 1,
        "estimate": {
            "matrix": [[9.0, 0.0], [0.0, 4.0]],
            "kind": "EBS", "b_n": 1, "a_n": 2, "n": 1,
            "min_eigenvalue": 4.0, "indefinite": false
        }
    });
    fs::write(&fit, doc.to_string()).unwrap();
    let set: Value = serde_json::from_str(&ok(&["regions", "--estimate", path(&fit), "--p", "0.1"])).unwrap();
    let z = set["simultaneous"]["z"].as_f64().unwrap();
    assert!((z - 1.9486).abs() < 2e-3, "{z}");
    let hw = set["simultaneous"]["halfwidths"].as_array().unwrap();
    assert!((hw[0].as_f64().unwrap() - 3.0 * z).abs() < 1e-9);
    let unc = set["uncorrected"]["z"].as_f64().unwrap();
    let bon = set["bonferroni"]["z"].as_f64().unwrap();
    assert!(unc < z && z < bon);

    let table = ok(&["regions", "--estimate", path(&fit), "--p", "0.1", "--format", "table"]);
    assert!(table.contains("simultaneous"));
}

#[test]
fn estimate_from_iterates() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("chain.csv");
    fs::write(&chain, "x\n1\n2\n3\n4\n").unwrap();
    let fit: Value = serde_json::from_str(&ok(&[
        "estimate", "--iterates", path(&chain), "--b", "2", "--estimator", "ebs",
    ]))
    .unwrap();
    assert_eq!(fit["estimate"]["matrix"][0][0].as_f64().unwrap(), 2.0);
    assert_eq!(fit["theta_hat"][0].as_f64().unwrap(), 2.5);
}

#[test]
fn estimate_then_predict_on_csv() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let des = gen_design(DesignKind::Identity, 3, 0.0).unwrap();
    let rows = gen_stream(ModelKind::Logistic, des, vec![1.0f64, -0.5, 0.25], 11).unwrap().take_vec(8000);
    let mut text = String::from("a,b,c,y\n");
    for r in &rows {
        text += &format!("{},{},{},{}\n", r.x[0], r.x[1], r.x[2], r.y);
    }
    fs::write(&data, text).unwrap();

    let fit = dir.path().join("fit.json");
    ok(&[
        "estimate", "--data", path(&data), "--response", "y", "--warm-start", "500", "--burn-in", "200", "--seed", "3",
        "--out", path(&fit),
    ]);
    let doc: Value = serde_json::from_str(&fs::read_to_string(&fit).unwrap()).unwrap();
    let theta = doc["theta_hat"].as_array().unwrap();
    assert_eq!(theta.len(), 3);
    assert!((theta[0].as_f64().unwrap() - 1.0).abs() < 0.25, "{theta:?}");

    let table = ok(&["predict", "--data", path(&data), "--fit", path(&fit), "--cutoffs", "0.3,0.5"]);
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("q,plain_error,conservative_error"));
    assert_eq!(lines.count(), 2);

    let per_row = ok(&["predict", "--data", path(&data), "--fit", path(&fit), "--rows", "--response", "y"]);
    let mut lines = per_row.lines();
    assert!(lines.next().unwrap().starts_with("row,p_hat,se,lower,upper"));
    assert_eq!(lines.count(), 8000);
}

#[test]
fn bias_oracle_and_qq() {
    let bias = ok(&["bias-oracle", "--n", "500,2000"]);
    assert_eq!(bias.lines().next().unwrap(), "n,b,a,ebs,lugsail");
    assert_eq!(bias.lines().count(), 3);
    let qq = ok(&["qq", "--seed", "5"]);
    assert_eq!(qq.lines().next().unwrap(), "empirical,theoretical");
}

#[test]
fn exit_codes() {
    assert_eq!(sgd(&["simulate", "--model", "nonsense"]).status.code(), Some(2));
    assert_eq!(sgd(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(sgd(&["simulate", "--alpha", "0.3", "--reps", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "1,2\n3,oops\n").unwrap();
    let out = sgd(&["estimate", "--iterates", path(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 2"));
}
