//! Small numeric kernels shared across modules.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

/// `softmax(logits / tau)`, stabilized by max-subtraction.
pub fn softmax_temp(logits: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let mut out = logits.to_owned();
    softmax_in_place(out.view_mut(), tau);
    out
}

pub fn softmax_in_place(mut row: ArrayViewMut1<f64>, tau: f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) / tau).exp();
        sum += *v;
    }
    row.mapv_inplace(|v| v / sum);
}

/// `log softmax(logits)` at unit temperature.
pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

/// Vector-Jacobian product of `p = softmax(z / tau)`: maps `dL/dp` to `dL/dz`.
pub fn softmax_vjp(probs: ArrayView1<f64>, grad_probs: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    let dot = probs.dot(&grad_probs);
    let mut out = Array1::zeros(probs.len());
    for ((o, &p), &g) in out.iter_mut().zip(probs.iter()).zip(grad_probs.iter()) {
        *o = p * (g - dot) / tau;
    }
    out
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax(values: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn all_finite<'a>(values: impl IntoIterator<Item = &'a f64>) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
