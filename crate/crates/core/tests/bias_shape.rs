//! Mean-model bias against the collapsed bias formula.

use sgd_infer::covariance::EstimatorKind;
use sgd_infer::experiments::{fit_c1, mean_model_bias_oracle, mean_se, run_replications, ExperimentConfig};
use sgd_infer::models::ModelKind;

#[test]
fn ebs_bias_follows_oracle_shape() {
    let checkpoints: Vec<u64> = (1..=8).map(|k| k * 250).collect();
    let cfg = ExperimentConfig {
        model: ModelKind::Mean,
        d: 1,
        eta0: 1.0,
        alpha: 0.51,
        burn_in: 0,
        n_max: 2000,
        checkpoints: checkpoints.clone(),
        replications: 2000,
        seed: 21,
        estimators: vec![EstimatorKind::Ebs, EstimatorKind::Lugsail],
        rectangles: false,
        oracle: false,
        ..Default::default()
    };
    let run = run_replications::<f64>(&cfg).unwrap();
    let stats = |n: u64, label: &str| {
        let v = run.reps.iter().map(|r| {
            let c = r.cells.iter().find(|c| c.n == n && c.estimator == label).unwrap();
            c.sigma.as_ref().map_or(f64::NAN, |s| s[0] - 1.0)
        });
        mean_se(v).unwrap()
    };
    let shape: Vec<f64> = checkpoints
        .iter()
        .map(|&n| mean_model_bias_oracle(n, cfg.alpha, cfg.c, cfg.beta(), 1.0).unwrap().ebs)
        .collect();
    let ebs: Vec<(f64, f64, usize)> = checkpoints.iter().map(|&n| stats(n, "EBS")).collect();
    let lug: Vec<(f64, f64, usize)> = checkpoints.iter().map(|&n| stats(n, "LUGSAIL")).collect();
    let observed: Vec<f64> = ebs.iter().map(|e| e.0).collect();
    let c1 = fit_c1(&shape, &observed).unwrap();
    let mut worst_z: f64 = 0.0;
    for (i, &n) in checkpoints.iter().enumerate() {
        let fit = c1 * shape[i];
        let z = (observed[i] - fit) / ebs[i].1;
        worst_z = worst_z.max(z.abs());
        eprintln!(
            "n={n} ebs={:+.4}±{:.4} fit={fit:+.4} z={z:+.2} lugsail={:+.4}",
            ebs[i].0, ebs[i].1, lug[i].0
        );
        assert!(observed[i] < 0.0, "n={n}");
        assert!(lug[i].0.abs() < observed[i].abs(), "n={n}");
        // The formula drops lower-order terms; at 2000 replications the
        // standard errors resolve that remainder, so check relative misfit.
        assert!((observed[i] - fit).abs() < 0.05 * fit.abs(), "n={n}: {} vs {fit}", observed[i]);
    }
    eprintln!("c1={c1:.4} worst |z|={worst_z:.2}");
    assert!(c1 > 0.0);
}
