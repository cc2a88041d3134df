use serde::Serialize;

use crate::batching::ebs_batch_size;
use crate::error::{Error, Result};

/// Approximate finite-sample bias of the EBS and lugsail estimators on the
/// mean model, for a given constant `C₁`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BiasOracle {
    pub n: u64,
    pub b: u64,
    pub a: u64,
    pub ebs: f64,
    pub lugsail: f64,
}

/// `−(2C₁/n) Σ_{j<k} Σ_{p∈B_j} Σ_{q∈B_k} q^{−α}(1−q^{−α})^{q−p}` for equal
/// batches of size `b`, with the sum over `p` done in closed form:
/// for `q` in batch `k`, `Σ_{p≤τ_{k−1}} q^{−α} r^{q−p} = r^{q−τ_{k−1}}(1 − r^{τ_{k−1}})`
/// where `r = 1 − q^{−α}`.
pub fn equal_batch_bias(n: u64, b: u64, alpha: f64, c1: f64) -> f64 {
    if b == 0 {
        return 0.0;
    }
    let a = n / b;
    if a < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 2..=a {
        let tau = (k - 1) * b;
        for q in (tau + 1)..=(k * b) {
            let lr = (-(q as f64).powf(-alpha)).ln_1p();
            let head = ((q - tau) as f64 * lr).exp();
            let tail = -(tau as f64 * lr).exp_m1();
            total += head * tail;
        }
    }
    -2.0 * c1 * total / n as f64
}

/// Literal triple sum; `O(n²)`, for checking [`equal_batch_bias`].
pub fn equal_batch_bias_naive(n: u64, b: u64, alpha: f64, c1: f64) -> f64 {
    let a = n / b;
    let mut total = 0.0;
    for j in 1..=a {
        for k in (j + 1)..=a {
            for p in ((j - 1) * b + 1)..=(j * b) {
                for q in ((k - 1) * b + 1)..=(k * b) {
                    let w = (q as f64).powf(-alpha);
                    total += w * (1.0 - w).powi((q - p) as i32);
                }
            }
        }
    }
    -2.0 * c1 * total / n as f64
}

/// EBS bias at the doubling batch size and the lugsail version
/// `2·bias(2b) − bias(b)`.
pub fn mean_model_bias_oracle(n: u64, alpha: f64, c: f64, beta: f64, c1: f64) -> Result<BiasOracle> {
    if !(alpha > 0.5 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0.5, 1), got {alpha}")));
    }
    let b = ebs_batch_size(n, c, beta)?;
    let ebs = equal_batch_bias(n, b, alpha, c1);
    let lugsail = 2.0 * equal_batch_bias(n, 2 * b, alpha, c1) - ebs;
    Ok(BiasOracle {
        n,
        b,
        a: n / b,
        ebs,
        lugsail,
    })
}

/// Least-squares `C₁` matching `observed ≈ C₁·shape` (shape evaluated at `C₁ = 1`).
pub fn fit_c1(shape: &[f64], observed: &[f64]) -> Result<f64> {
    if shape.len() != observed.len() || shape.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: shape.len(),
            found: observed.len(),
        });
    }
    let ss: f64 = shape.iter().map(|s| s * s).sum();
    if ss == 0.0 {
        return Err(Error::Degenerate("bias shape is identically zero".into()));
    }
    Ok(shape.iter().zip(observed).map(|(s, o)| s * o).sum::<f64>() / ss)
}
