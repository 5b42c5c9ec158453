use super::LayerGrads;
use crate::error::Result;
use crate::tensor::Tensor;

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Passes upstream where the forward input was strictly positive.
pub fn relu_backward(forward_input: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    forward_input.ensure_same_shape(upstream, "relu_backward")?;
    let data = forward_input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(LayerGrads::input_only(Tensor::new(
        forward_input.shape(),
        data,
    )?))
}

/// Row-wise softmax of a `[batch, classes]` tensor, shifted by the row max.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let [_, cols] = input.dims2()?;
    let mut out = input.data().to_vec();
    for row in out.chunks_mut(cols) {
        softmax_in_place(row);
    }
    Tensor::new(input.shape(), out)
}

pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut total = 0.0f64;
    let exps: Vec<f64> = row
        .iter()
        .map(|&v| {
            let e = ((v - max) as f64).exp();
            total += e;
            e
        })
        .collect();
    for (v, e) in row.iter_mut().zip(exps) {
        *v = (e / total) as f32;
    }
}

/// Vector-Jacobian product through softmax, given the forward *output*.
pub fn softmax_backward(output: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    output.ensure_same_shape(upstream, "softmax_backward")?;
    let [_, cols] = output.dims2()?;
    let mut grad = Vec::with_capacity(output.len());
    for (s, g) in output.data().chunks(cols).zip(upstream.data().chunks(cols)) {
        let dot: f64 = s.iter().zip(g).map(|(&a, &b)| a as f64 * b as f64).sum();
        grad.extend(s.iter().zip(g).map(|(&si, &gi)| si * (gi - dot as f32)));
    }
    Ok(LayerGrads::input_only(Tensor::new(output.shape(), grad)?))
}
