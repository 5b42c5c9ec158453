use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{axis_geometry, Padding, BN_EPSILON, BN_MOMENTUM};

use super::extractor::StubConfig;

/// One node's operation. Shapes below exclude the batch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    Input {
        shape: Vec<usize>,
    },
    Conv2d {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    MaxPool2d {
        window: usize,
        stride: usize,
        padding: Padding,
    },
    BatchNorm {
        momentum: f32,
        epsilon: f32,
    },
    Dropout {
        rate: f32,
    },
    Dense {
        units: usize,
    },
    Relu,
    Softmax,
    Concat,
    GlobalAvgPool,
    Flatten,
    /// Frozen feature extractor whose weights are regenerated from its seed.
    Backbone(StubConfig),
}

impl LayerSpec {
    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm {
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Input { .. } => "input",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::MaxPool2d { .. } => "max_pool2d",
            LayerSpec::BatchNorm { .. } => "batch_norm",
            LayerSpec::Dropout { .. } => "dropout",
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Relu => "relu",
            LayerSpec::Softmax => "softmax",
            LayerSpec::Concat => "concat",
            LayerSpec::GlobalAvgPool => "global_avg_pool",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Backbone(_) => "backbone",
        }
    }

    /// Output shape for the given input shapes, validating arity and extents.
    pub(crate) fn infer(&self, inputs: &[&[usize]]) -> Result<Vec<usize>> {
        let arity_err = |want: &str| {
            Error::shape(format!(
                "{} expects {want} input(s), got {}",
                self.kind(),
                inputs.len()
            ))
        };
        if let LayerSpec::Input { shape } = self {
            if !inputs.is_empty() {
                return Err(arity_err("no"));
            }
            if shape.is_empty() || shape.len() > 3 || shape.contains(&0) {
                return Err(Error::config(format!("invalid input shape {shape:?}")));
            }
            return Ok(shape.clone());
        }
        if let LayerSpec::Concat = self {
            if inputs.len() < 2 {
                return Err(arity_err("at least two"));
            }
            let lead = &inputs[0][..inputs[0].len() - 1];
            let mut channels = 0;
            for s in inputs {
                if &s[..s.len() - 1] != lead {
                    return Err(Error::shape(format!(
                        "concat: {s:?} does not match leading extents {lead:?}"
                    )));
                }
                channels += s[s.len() - 1];
            }
            let mut out = lead.to_vec();
            out.push(channels);
            return Ok(out);
        }
        let [x] = inputs else {
            return Err(arity_err("one"));
        };
        let spatial = |what: &str| -> Result<[usize; 3]> {
            match x[..] {
                [h, w, c] => Ok([h, w, c]),
                _ => Err(Error::shape(format!("{what} needs an HxWxC input, got {x:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                filters,
                kernel,
                stride,
                padding,
            } => {
                if filters == 0 || kernel == 0 || stride == 0 {
                    return Err(Error::config("conv2d filters, kernel and stride must be positive"));
                }
                let [h, w, _] = spatial("conv2d")?;
                let gy = axis_geometry(h, kernel, stride, padding)?;
                let gx = axis_geometry(w, kernel, stride, padding)?;
                Ok(vec![gy.out, gx.out, filters])
            }
            LayerSpec::MaxPool2d {
                window,
                stride,
                padding,
            } => {
                let [h, w, c] = spatial("max_pool2d")?;
                let gy = axis_geometry(h, window, stride, padding)?;
                let gx = axis_geometry(w, window, stride, padding)?;
                Ok(vec![gy.out, gx.out, c])
            }
            LayerSpec::GlobalAvgPool => {
                let [_, _, c] = spatial("global_avg_pool")?;
                Ok(vec![c])
            }
            LayerSpec::Dense { units } => {
                if units == 0 {
                    return Err(Error::config("dense units must be positive"));
                }
                if x.len() != 1 {
                    return Err(Error::shape(format!("dense needs a flat input, got {x:?}")));
                }
                Ok(vec![units])
            }
            LayerSpec::Softmax => {
                if x.len() != 1 {
                    return Err(Error::shape(format!("softmax needs a flat input, got {x:?}")));
                }
                Ok(x.to_vec())
            }
            LayerSpec::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::config(format!("dropout rate {rate} not in [0, 1)")));
                }
                Ok(x.to_vec())
            }
            LayerSpec::BatchNorm { momentum, epsilon } => {
                if !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 {
                    return Err(Error::config("batch_norm needs momentum in [0, 1) and epsilon > 0"));
                }
                Ok(x.to_vec())
            }
            LayerSpec::Relu => Ok(x.to_vec()),
            LayerSpec::Flatten => Ok(vec![x.iter().product()]),
            LayerSpec::Backbone(ref cfg) => {
                cfg.validate()?;
                let want = [cfg.input_hw.0, cfg.input_hw.1, cfg.channels];
                if **x != want {
                    return Err(Error::shape(format!(
                        "backbone expects {want:?}, got {x:?}"
                    )));
                }
                Ok(vec![cfg.feature_dim])
            }
            LayerSpec::Input { .. } | LayerSpec::Concat => unreachable!(),
        }
    }

    /// Parameter suffixes and shapes for a node with the given input shape.
    /// Trainable parameters come first; batch-norm running statistics last.
    pub(crate) fn params(&self, input: &[usize]) -> Vec<(&'static str, Vec<usize>, bool)> {
        let last = input.last().copied().unwrap_or(0);
        match *self {
            LayerSpec::Conv2d {
                filters, kernel, ..
            } => vec![
                ("kernel", vec![kernel, kernel, last, filters], true),
                ("bias", vec![filters], true),
            ],
            LayerSpec::Dense { units } => vec![
                ("weights", vec![last, units], true),
                ("bias", vec![units], true),
            ],
            LayerSpec::BatchNorm { .. } => vec![
                ("gamma", vec![last], true),
                ("beta", vec![last], true),
                ("moving_mean", vec![last], false),
                ("moving_variance", vec![last], false),
            ],
            _ => Vec::new(),
        }
    }
}
