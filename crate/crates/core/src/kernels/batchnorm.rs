use std::collections::BTreeMap;

use super::{LayerGrads, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPSILON: f32 = 1e-3;
pub const BN_MOMENTUM: f32 = 0.99;

/// What [`batchnorm_backward`] needs from the forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache {
    x_hat: Vec<f32>,
    inv_std: Vec<f32>,
    channels: usize,
    mode: Mode,
    shape: Vec<usize>,
}

fn check_param(p: &Tensor, channels: usize, what: &str) -> Result<()> {
    if p.shape() != [channels] {
        return Err(Error::shape(format!(
            "batchnorm: {what} {:?} does not match {channels} channels",
            p.shape()
        )));
    }
    Ok(())
}

/// Per-channel normalization over every non-channel axis.
///
/// Train mode normalizes with the (biased) batch statistics and folds them
/// into the running estimates as `run = momentum * run + (1 - momentum) * batch`.
/// Infer mode uses the running estimates and leaves them untouched.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    running_mean: &mut Tensor,
    running_var: &mut Tensor,
    mode: Mode,
    momentum: f32,
    epsilon: f32,
) -> Result<(Tensor, BatchNormCache)> {
    let c = input.channels();
    check_param(gamma, c, "gamma")?;
    check_param(beta, c, "beta")?;
    check_param(running_mean, c, "running mean")?;
    check_param(running_var, c, "running variance")?;
    let count = input.len() / c;

    let (mean, var): (Vec<f32>, Vec<f32>) = match mode {
        Mode::Train => {
            // fixed summation order: pixel-major, sequential
            let mut sum = vec![0.0f64; c];
            for px in input.data().chunks(c) {
                for (s, &v) in sum.iter_mut().zip(px) {
                    *s += v as f64;
                }
            }
            let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
            let mut sq = vec![0.0f64; c];
            for px in input.data().chunks(c) {
                for ((s, &v), m) in sq.iter_mut().zip(px).zip(&mean) {
                    let d = v as f64 - m;
                    *s += d * d;
                }
            }
            let var: Vec<f64> = sq.iter().map(|s| s / count as f64).collect();
            for ch in 0..c {
                let rm = &mut running_mean.data_mut()[ch];
                *rm = momentum * *rm + (1.0 - momentum) * mean[ch] as f32;
                let rv = &mut running_var.data_mut()[ch];
                *rv = momentum * *rv + (1.0 - momentum) * var[ch] as f32;
            }
            (
                mean.into_iter().map(|v| v as f32).collect(),
                var.into_iter().map(|v| v as f32).collect(),
            )
        }
        Mode::Infer => (running_mean.data().to_vec(), running_var.data().to_vec()),
    };

    let inv_std: Vec<f32> = var
        .iter()
        .map(|&v| (1.0 / (v as f64 + epsilon as f64).sqrt()) as f32)
        .collect();
    let mut x_hat = Vec::with_capacity(input.len());
    let mut out = Vec::with_capacity(input.len());
    for px in input.data().chunks(c) {
        for ch in 0..c {
            let xh = (px[ch] - mean[ch]) * inv_std[ch];
            x_hat.push(xh);
            out.push(gamma.data()[ch] * xh + beta.data()[ch]);
        }
    }
    Ok((
        Tensor::new(input.shape(), out)?,
        BatchNormCache {
            x_hat,
            inv_std,
            channels: c,
            mode,
            shape: input.shape().to_vec(),
        },
    ))
}

pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Tensor,
    upstream: &Tensor,
) -> Result<LayerGrads> {
    let c = cache.channels;
    if upstream.shape() != cache.shape.as_slice() {
        return Err(Error::shape(format!(
            "batchnorm_backward: upstream {:?} but forward output is {:?}",
            upstream.shape(),
            cache.shape
        )));
    }
    check_param(gamma, c, "gamma")?;
    let count = upstream.len() / c;

    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for (g, xh) in upstream.data().chunks(c).zip(cache.x_hat.chunks(c)) {
        for ch in 0..c {
            dgamma[ch] += g[ch] as f64 * xh[ch] as f64;
            dbeta[ch] += g[ch] as f64;
        }
    }

    let mut dx = Vec::with_capacity(upstream.len());
    match cache.mode {
        Mode::Train => {
            // dx = gamma * inv_std / m * (m * g - sum(g) - x_hat * sum(g * x_hat))
            let m = count as f64;
            for (g, xh) in upstream.data().chunks(c).zip(cache.x_hat.chunks(c)) {
                for ch in 0..c {
                    let scale = gamma.data()[ch] as f64 * cache.inv_std[ch] as f64 / m;
                    let v = scale * (m * g[ch] as f64 - dbeta[ch] - xh[ch] as f64 * dgamma[ch]);
                    dx.push(v as f32);
                }
            }
        }
        Mode::Infer => {
            for g in upstream.data().chunks(c) {
                for ((gv, gm), is) in g.iter().zip(gamma.data()).zip(&cache.inv_std) {
                    dx.push(gv * gm * is);
                }
            }
        }
    }

    let mut param_grads = BTreeMap::new();
    param_grads.insert(
        "gamma".to_string(),
        Tensor::new(&[c], dgamma.into_iter().map(|v| v as f32).collect())?,
    );
    param_grads.insert(
        "beta".to_string(),
        Tensor::new(&[c], dbeta.into_iter().map(|v| v as f32).collect())?,
    );
    Ok(LayerGrads {
        input_grad: Tensor::new(&cache.shape, dx)?,
        param_grads,
    })
}
