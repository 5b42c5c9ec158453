//! Training losses over a single prediction vector, plus a batch wrapper.
//!
//! `mse`, `hinge` and `cosine` take the model's output (post-softmax
//! probabilities); `cross_entropy` and `multilabel` take logits.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub grad: Tensor,
}

fn check(x: &[f32], y: &[f32]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "loss: prediction has {} entries, target {}",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

fn value(value: f64, grad: Vec<f32>) -> Result<LossValue> {
    let n = grad.len();
    Ok(LossValue {
        value,
        grad: Tensor::new(&[n], grad)?,
    })
}

/// Mean squared error, `(1/n) Σ (x_i - y_i)^2`.
pub fn mse_loss(x: &[f32], y: &[f32]) -> Result<LossValue> {
    check(x, y)?;
    let n = x.len() as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(x.len());
    for (&xi, &yi) in x.iter().zip(y) {
        let d = xi as f64 - yi as f64;
        total += d * d;
        grad.push((2.0 * d / n) as f32);
    }
    value(total / n, grad)
}

/// Categorical cross-entropy of `softmax(x)` against a one-hot target.
pub fn cross_entropy_loss(x: &[f32], y: &[f32]) -> Result<LossValue> {
    check(x, y)?;
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let log_z = x
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln();
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(x.len());
    for (&xi, &yi) in x.iter().zip(y) {
        let log_p = xi as f64 - max - log_z;
        total -= yi as f64 * log_p;
        grad.push((log_p.exp() - yi as f64) as f32);
    }
    value(total, grad)
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Independent-sigmoid (multi-label) cross-entropy over logits.
pub fn multilabel_loss(x: &[f32], y: &[f32]) -> Result<LossValue> {
    check(x, y)?;
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::config("multilabel_loss: targets must be 0 or 1"));
    }
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(x.len());
    for (&xi, &yi) in x.iter().zip(y) {
        let (t, yi) = (xi as f64, yi as f64);
        // log σ(t) = -softplus(-t), log(1 - σ(t)) = -softplus(t)
        total += yi * softplus(-t) + (1.0 - yi) * softplus(t);
        grad.push((sigmoid(t) - yi) as f32);
    }
    value(total, grad)
}

/// Class-averaged hinge loss with the one-hot target mapped to ±1.
pub fn hinge_loss(pred: &[f32], y: &[f32]) -> Result<LossValue> {
    check(pred, y)?;
    let n = pred.len() as f64;
    let mut total = 0.0f64;
    let mut grad = Vec::with_capacity(pred.len());
    for (&p, &yi) in pred.iter().zip(y) {
        let t = if yi > 0.5 { 1.0 } else { -1.0 };
        let margin = 1.0 - t * p as f64;
        if margin > 0.0 {
            total += margin;
            grad.push((-t / n) as f32);
        } else {
            grad.push(0.0);
        }
    }
    value(total / n, grad)
}

/// `1 - <y, pred / ||pred||>`.
pub fn cosine_loss(pred: &[f32], y: &[f32]) -> Result<LossValue> {
    check(pred, y)?;
    let norm = pred
        .iter()
        .map(|&p| (p as f64) * (p as f64))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        return Err(Error::DegenerateNorm);
    }
    let dot: f64 = pred.iter().zip(y).map(|(&p, &t)| p as f64 * t as f64).sum();
    let norm3 = norm * norm * norm;
    let grad = pred
        .iter()
        .zip(y)
        .map(|(&p, &t)| (-(t as f64 / norm - dot * p as f64 / norm3)) as f32)
        .collect();
    value(1.0 - dot / norm, grad)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Hinge,
    Cosine,
    CrossEntropy,
    Mse,
}

impl LossKind {
    /// Whether the loss consumes pre-softmax logits instead of probabilities.
    pub fn takes_logits(self) -> bool {
        matches!(self, LossKind::CrossEntropy)
    }

    pub fn eval(self, pred: &[f32], y: &[f32]) -> Result<LossValue> {
        match self {
            LossKind::Hinge => hinge_loss(pred, y),
            LossKind::Cosine => cosine_loss(pred, y),
            LossKind::CrossEntropy => cross_entropy_loss(pred, y),
            LossKind::Mse => mse_loss(pred, y),
        }
    }

    /// Batch-mean loss over `[batch, k]` rows and its gradient (already
    /// divided by the batch size).
    pub fn batch(self, pred: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
        pred.ensure_same_shape(targets, "loss targets")?;
        let [rows, cols] = pred.dims2()?;
        let mut total = 0.0f64;
        let mut grad = Vec::with_capacity(pred.len());
        for (p, t) in pred.data().chunks(cols).zip(targets.data().chunks(cols)) {
            let lv = self.eval(p, t)?;
            total += lv.value;
            grad.extend(lv.grad.data().iter().map(|g| g / rows as f32));
        }
        Ok((total / rows as f64, Tensor::new(pred.shape(), grad)?))
    }
}
