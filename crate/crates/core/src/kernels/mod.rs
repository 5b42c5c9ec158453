//! Differentiable layer kernels.
//!
//! Each forward kernel is a pure function of its inputs. Backward kernels take
//! the forward input (plus whatever the forward pass cached) and the upstream
//! gradient, and return a [`LayerGrads`]. Models chain these explicitly in
//! reverse topological order; there is no tape.

mod activation;
mod batchnorm;
mod concat;
mod conv;
mod dense;
mod dropout;
pub(crate) mod gemm;
mod pool;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use activation::{relu, relu_backward, softmax, softmax_backward};
pub use batchnorm::{batchnorm, batchnorm_backward, BatchNormCache, BN_EPSILON, BN_MOMENTUM};
pub use concat::{concat_channels, split_channels};
pub use conv::{conv2d, conv2d_backward};
pub use dense::{dense, dense_backward};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool2d, maxpool2d_backward};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

impl Padding {
    pub fn as_str(self) -> &'static str {
        match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub input_grad: Tensor,
    pub param_grads: BTreeMap<String, Tensor>,
}

impl LayerGrads {
    fn input_only(input_grad: Tensor) -> Self {
        LayerGrads {
            input_grad,
            param_grads: BTreeMap::new(),
        }
    }
}

/// Output extent and leading pad of a sliding window along one axis.
///
/// `same` pads so that `out = ceil(input / stride)`, splitting the total pad
/// evenly with the odd pixel going to the bottom/right.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AxisGeometry {
    pub out: usize,
    pub pad_before: usize,
}

pub fn axis_geometry(
    input: usize,
    window: usize,
    stride: usize,
    padding: Padding,
) -> Result<AxisGeometry> {
    if window == 0 || stride == 0 {
        return Err(Error::config(format!(
            "window ({window}) and stride ({stride}) must be positive"
        )));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = (out - 1) * stride + window;
            let pad_total = needed.saturating_sub(input);
            Ok(AxisGeometry {
                out,
                pad_before: pad_total / 2,
            })
        }
        Padding::Valid => {
            if input < window {
                return Err(Error::config(format!(
                    "valid window {window} does not fit input extent {input}"
                )));
            }
            Ok(AxisGeometry {
                out: (input - window) / stride + 1,
                pad_before: 0,
            })
        }
    }
}
