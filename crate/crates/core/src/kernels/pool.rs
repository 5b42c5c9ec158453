use rayon::prelude::*;

use super::{axis_geometry, AxisGeometry, LayerGrads, Padding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct PoolPlan {
    h: usize,
    w: usize,
    c: usize,
    window: usize,
    stride: usize,
    gy: AxisGeometry,
    gx: AxisGeometry,
}

impl PoolPlan {
    fn new(input: &Tensor, window: usize, stride: usize, padding: Padding) -> Result<Self> {
        let [_, h, w, c] = input.dims4()?;
        Ok(PoolPlan {
            h,
            w,
            c,
            window,
            stride,
            gy: axis_geometry(h, window, stride, padding)?,
            gx: axis_geometry(w, window, stride, padding)?,
        })
    }

    /// In-bounds rows (or columns) covered by output index `o`.
    fn span(&self, o: usize, g: AxisGeometry, extent: usize) -> std::ops::Range<usize> {
        let start = o * self.stride;
        let lo = start.saturating_sub(g.pad_before);
        let hi = (start + self.window).saturating_sub(g.pad_before).min(extent);
        lo..hi
    }

    /// Flat pixel index of the first maximum in row-major scan order, per
    /// channel, for output cell `(oy, ox)`.
    fn argmax(&self, image: &[f32], oy: usize, ox: usize, out: &mut [usize]) {
        let rows = self.span(oy, self.gy, self.h);
        let cols = self.span(ox, self.gx, self.w);
        for (ch, best) in out.iter_mut().enumerate() {
            let mut best_px = usize::MAX;
            let mut best_v = f32::NEG_INFINITY;
            for y in rows.clone() {
                for x in cols.clone() {
                    let px = y * self.w + x;
                    let v = image[px * self.c + ch];
                    if best_px == usize::MAX || v > best_v {
                        best_px = px;
                        best_v = v;
                    }
                }
            }
            *best = best_px;
        }
    }
}

/// Max pooling. Padded positions of `same` windows are skipped, never
/// treated as zeros.
pub fn maxpool2d(input: &Tensor, window: usize, stride: usize, padding: Padding) -> Result<Tensor> {
    let plan = PoolPlan::new(input, window, stride, padding)?;
    let (oh, ow, c) = (plan.gy.out, plan.gx.out, plan.c);
    let n = input.batch();
    let in_per = plan.h * plan.w * c;
    let mut out = vec![0.0f32; n * oh * ow * c];
    out.par_chunks_mut(oh * ow * c)
        .zip(input.data().par_chunks(in_per))
        .for_each(|(dst, image)| {
            let mut idx = vec![0usize; c];
            for oy in 0..oh {
                for ox in 0..ow {
                    plan.argmax(image, oy, ox, &mut idx);
                    let cell = &mut dst[(oy * ow + ox) * c..][..c];
                    for (ch, v) in cell.iter_mut().enumerate() {
                        *v = image[idx[ch] * c + ch];
                    }
                }
            }
        });
    Tensor::new(&[n, oh, ow, c], out)
}

/// Routes each upstream value to the (first) argmax of its window.
pub fn maxpool2d_backward(
    forward_input: &Tensor,
    upstream: &Tensor,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<LayerGrads> {
    let plan = PoolPlan::new(forward_input, window, stride, padding)?;
    let (oh, ow, c) = (plan.gy.out, plan.gx.out, plan.c);
    let n = forward_input.batch();
    if upstream.shape() != [n, oh, ow, c] {
        return Err(Error::shape(format!(
            "maxpool2d_backward: upstream {:?} but forward output is {:?}",
            upstream.shape(),
            [n, oh, ow, c]
        )));
    }
    let in_per = plan.h * plan.w * c;
    let mut grad = vec![0.0f32; n * in_per];
    grad.par_chunks_mut(in_per)
        .zip(forward_input.data().par_chunks(in_per))
        .zip(upstream.data().par_chunks(oh * ow * c))
        .for_each(|((dx, image), dy)| {
            let mut idx = vec![0usize; c];
            for oy in 0..oh {
                for ox in 0..ow {
                    plan.argmax(image, oy, ox, &mut idx);
                    let cell = &dy[(oy * ow + ox) * c..][..c];
                    for ch in 0..c {
                        dx[idx[ch] * c + ch] += cell[ch];
                    }
                }
            }
        });
    Ok(LayerGrads::input_only(Tensor::new(
        forward_input.shape(),
        grad,
    )?))
}

/// Mean over the spatial plane of each channel: `[n, h, w, c] -> [n, c]`.
pub fn global_avg_pool(input: &Tensor) -> Result<Tensor> {
    let [n, h, w, c] = input.dims4()?;
    let plane = h * w;
    let mut out = Vec::with_capacity(n * c);
    for image in input.data().chunks(plane * c) {
        let mut acc = vec![0.0f64; c];
        for px in image.chunks(c) {
            for (a, &v) in acc.iter_mut().zip(px) {
                *a += v as f64;
            }
        }
        out.extend(acc.into_iter().map(|s| (s / plane as f64) as f32));
    }
    Tensor::new(&[n, c], out)
}

pub fn global_avg_pool_backward(forward_input: &Tensor, upstream: &Tensor) -> Result<LayerGrads> {
    let [n, h, w, c] = forward_input.dims4()?;
    if upstream.shape() != [n, c] {
        return Err(Error::shape(format!(
            "global_avg_pool_backward: upstream {:?} but forward output is {:?}",
            upstream.shape(),
            [n, c]
        )));
    }
    let scale = 1.0 / (h * w) as f32;
    let mut grad = Vec::with_capacity(forward_input.len());
    for row in upstream.data().chunks(c) {
        for _ in 0..h * w {
            grad.extend(row.iter().map(|g| g * scale));
        }
    }
    Ok(LayerGrads::input_only(Tensor::new(
        forward_input.shape(),
        grad,
    )?))
}
