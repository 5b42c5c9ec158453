use std::borrow::Cow;
use std::collections::BTreeMap;

use rayon::prelude::*;

use super::gemm::gemm;
use super::{axis_geometry, LayerGrads, Padding};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Geometry of one convolution call, shared by forward and backward.
struct ConvPlan {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvPlan {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let [_, h, w, cin] = input.dims4()?;
        let [kh, kw, kcin, cout] = kernel.dims4()?;
        if kcin != cin {
            return Err(Error::shape(format!(
                "conv2d: input has {cin} channels but kernel expects {kcin}"
            )));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be >= 1"));
        }
        let gy = axis_geometry(h, kh, stride, padding)?;
        let gx = axis_geometry(w, kw, stride, padding)?;
        Ok(ConvPlan {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            stride,
            oh: gy.out,
            ow: gx.out,
            pad_top: gy.pad_before,
            pad_left: gx.pad_before,
        })
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Source pixel for output `(oy, ox)` and tap `(ky, kx)`, or `None` when
    /// it falls in the zero padding.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad_top)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad_left)?;
        (iy < self.h && ix < self.w).then_some(iy * self.w + ix)
    }

    /// Unfolds one image into a `[positions, patch]` matrix whose column
    /// order matches the `[kh, kw, cin]` prefix of the kernel layout.
    fn im2col<'a>(&self, image: &'a [f32]) -> Cow<'a, [f32]> {
        if self.is_pointwise() {
            return Cow::Borrowed(image);
        }
        let (patch, cin) = (self.patch(), self.cin);
        let mut cols = vec![0.0f32; self.positions() * patch];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &mut cols[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let dst = (ky * self.kw + kx) * cin;
                            row[dst..dst + cin].copy_from_slice(&image[src * cin..][..cin]);
                        }
                    }
                }
            }
        }
        Cow::Owned(cols)
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the
    /// image, summing overlaps.
    fn col2im(&self, cols: &[f32], image_grad: &mut [f32]) {
        if self.is_pointwise() {
            image_grad.copy_from_slice(cols);
            return;
        }
        let (patch, cin) = (self.patch(), self.cin);
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let row = &cols[(oy * self.ow + ox) * patch..][..patch];
                for ky in 0..self.kh {
                    for kx in 0..self.kw {
                        if let Some(src) = self.source(oy, ox, ky, kx) {
                            let from = (ky * self.kw + kx) * cin;
                            for (g, d) in image_grad[src * cin..][..cin]
                                .iter_mut()
                                .zip(&row[from..from + cin])
                            {
                                *g += d;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation over an NHWC batch with a `[kh, kw, cin, cout]`
/// kernel.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let plan = ConvPlan::new(input, kernel, stride, padding)?;
    if bias.shape() != [plan.cout] {
        return Err(Error::shape(format!(
            "conv2d: bias {:?} does not match {} output channels",
            bias.shape(),
            plan.cout
        )));
    }
    let n = input.batch();
    let in_per = plan.h * plan.w * plan.cin;
    let out_per = plan.positions() * plan.cout;
    let mut out = vec![0.0f32; n * out_per];
    out.par_chunks_mut(out_per)
        .zip(input.data().par_chunks(in_per))
        .for_each(|(dst, image)| {
            let cols = plan.im2col(image);
            gemm(
                plan.positions(),
                plan.patch(),
                plan.cout,
                &cols,
                false,
                kernel.data(),
                false,
                dst,
                false,
            );
            for px in dst.chunks_mut(plan.cout) {
                for (v, b) in px.iter_mut().zip(bias.data()) {
                    *v += b;
                }
            }
        });
    Tensor::new(&[n, plan.oh, plan.ow, plan.cout], out)
}

/// Gradients of [`conv2d`] with respect to its input, kernel and bias.
pub fn conv2d_backward(
    forward_input: &Tensor,
    kernel: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<LayerGrads> {
    let plan = ConvPlan::new(forward_input, kernel, stride, padding)?;
    let n = forward_input.batch();
    let expected = [n, plan.oh, plan.ow, plan.cout];
    if upstream.shape() != expected {
        return Err(Error::shape(format!(
            "conv2d_backward: upstream {:?} but forward output is {:?}",
            upstream.shape(),
            expected
        )));
    }
    let (positions, patch, cout) = (plan.positions(), plan.patch(), plan.cout);
    let in_per = plan.h * plan.w * plan.cin;

    let per_item: Vec<(Vec<f32>, Vec<f32>)> = forward_input
        .data()
        .par_chunks(in_per)
        .zip(upstream.data().par_chunks(positions * cout))
        .map(|(image, dy)| {
            let cols = plan.im2col(image);
            let mut dkernel = vec![0.0f32; patch * cout];
            gemm(patch, positions, cout, &cols, true, dy, false, &mut dkernel, false);
            let mut dcols = vec![0.0f32; positions * patch];
            gemm(positions, cout, patch, dy, false, kernel.data(), true, &mut dcols, false);
            let mut dx = vec![0.0f32; in_per];
            plan.col2im(&dcols, &mut dx);
            (dx, dkernel)
        })
        .collect();

    let mut input_grad = Vec::with_capacity(n * in_per);
    let mut kernel_grad = vec![0.0f32; patch * cout];
    for (dx, dk) in &per_item {
        input_grad.extend_from_slice(dx);
        for (acc, v) in kernel_grad.iter_mut().zip(dk) {
            *acc += v;
        }
    }
    let mut bias_grad = vec![0.0f64; cout];
    for px in upstream.data().chunks(cout) {
        for (acc, &g) in bias_grad.iter_mut().zip(px) {
            *acc += g as f64;
        }
    }

    let mut param_grads = BTreeMap::new();
    param_grads.insert(
        "kernel".to_string(),
        Tensor::new(kernel.shape(), kernel_grad)?,
    );
    param_grads.insert(
        "bias".to_string(),
        Tensor::new(&[cout], bias_grad.into_iter().map(|v| v as f32).collect())?,
    );
    Ok(LayerGrads {
        input_grad: Tensor::new(forward_input.shape(), input_grad)?,
        param_grads,
    })
}
