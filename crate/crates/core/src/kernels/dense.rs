use std::collections::BTreeMap;

use super::gemm::gemm;
use super::LayerGrads;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(input: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let [batch, din] = input.dims2()?;
    let [wdin, dout] = weights.dims2()?;
    if wdin != din {
        return Err(Error::shape(format!(
            "dense: input has {din} features but weights expect {wdin}"
        )));
    }
    Ok((batch, din, dout))
}

/// `input · weights + bias` for `[batch, din]` input and `[din, dout]` weights.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, din, dout) = check(input, weights)?;
    if bias.shape() != [dout] {
        return Err(Error::shape(format!(
            "dense: bias {:?} does not match {dout} outputs",
            bias.shape()
        )));
    }
    let mut out = vec![0.0f32; batch * dout];
    gemm(batch, din, dout, input.data(), false, weights.data(), false, &mut out, false);
    for row in out.chunks_mut(dout) {
        for (v, b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Tensor::new(&[batch, dout], out)
}

pub fn dense_backward(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let (batch, din, dout) = check(input, weights)?;
    if upstream.shape() != [batch, dout] {
        return Err(Error::shape(format!(
            "dense_backward: upstream {:?} but forward output is {:?}",
            upstream.shape(),
            [batch, dout]
        )));
    }
    let mut dx = vec![0.0f32; batch * din];
    gemm(batch, dout, din, upstream.data(), false, weights.data(), true, &mut dx, false);
    let mut dw = vec![0.0f32; din * dout];
    gemm(din, batch, dout, input.data(), true, upstream.data(), false, &mut dw, false);
    let mut db = vec![0.0f64; dout];
    for row in upstream.data().chunks(dout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g as f64;
        }
    }
    let mut param_grads = BTreeMap::new();
    param_grads.insert("weights".to_string(), Tensor::new(&[din, dout], dw)?);
    param_grads.insert(
        "bias".to_string(),
        Tensor::new(&[dout], db.into_iter().map(|v| v as f32).collect())?,
    );
    Ok(LayerGrads {
        input_grad: Tensor::new(&[batch, din], dx)?,
        param_grads,
    })
}
