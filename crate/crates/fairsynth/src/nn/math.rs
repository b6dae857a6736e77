//! Plain-array forward math shared by the tape ops and the inference paths.

use ndarray::{Array2, Axis};

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid_array(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(sigmoid)
}

/// Row-wise softmax over the lower-triangular prefix: row `i` attends to
/// columns `0..=i`, everything above the diagonal is forced to zero weight.
pub fn causal_softmax(scores: &Array2<f64>) -> Array2<f64> {
    let n = scores.nrows();
    assert_eq!(n, scores.ncols(), "causal softmax expects a square matrix");
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        let row = scores.row(i);
        let mut max = f64::NEG_INFINITY;
        for j in 0..=i {
            max = max.max(row[j]);
        }
        let mut z = 0.0;
        for j in 0..=i {
            let e = (row[j] - max).exp();
            out[[i, j]] = e;
            z += e;
        }
        for j in 0..=i {
            out[[i, j]] /= z;
        }
    }
    out
}

/// Row-wise softmax over all columns.
pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

/// Per-row standardization followed by a learned affine map.
///
/// Returns `(normalized, xhat, inv_std)`; the latter two feed the backward
/// pass.
pub fn layer_norm(
    x: &Array2<f64>,
    gain: &Array2<f64>,
    bias: &Array2<f64>,
    eps: f64,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let m = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / m;
        let var = row.fold(0.0, |a, &v| a + (v - mean) * (v - mean)) / m;
        let inv = 1.0 / (var + eps).sqrt();
        inv_std.push(inv);
        for v in row.iter_mut() {
            *v = (*v - mean) * inv;
        }
    }
    let mut out = xhat.clone();
    for mut row in out.rows_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = *v * gain[[0, j]] + bias[[0, j]];
        }
    }
    (out, xhat, inv_std)
}

/// Softened minimum as the softmax(-x/tau)-weighted average of the entries.
/// Approaches `min(v)` as `tau -> 0` and equals the common value exactly
/// when all entries agree. Returns the value together with its gradient
/// with respect to each entry.
pub fn softmin(values: &[f64], tau: f64) -> (f64, Vec<f64>) {
    assert!(tau > 0.0, "softmin temperature must be positive");
    assert!(!values.is_empty(), "softmin of an empty set");
    let c = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let exps: Vec<f64> = values.iter().map(|&v| (-(v - c) / tau).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    let value: f64 = weights.iter().zip(values).map(|(&w, &v)| w * v).sum();
    let grad = weights
        .iter()
        .zip(values)
        .map(|(&w, &v)| w * (1.0 + (value - v) / tau))
        .collect();
    (value, grad)
}

/// Mean over rows, keeping a 1 x m shape.
pub fn mean_rows(x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows() as f64;
    x.sum_axis(Axis(0)).insert_axis(Axis(0)) / n
}
