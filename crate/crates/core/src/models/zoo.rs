use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::extractor::StubConfig;
use super::graph::{GraphBuilder, ModelGraph, NodeId};
use super::layer::LayerSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InceptionModuleSpec {
    pub f1x1: usize,
    pub f3x3_reduce: usize,
    pub f3x3: usize,
    pub f5x5_reduce: usize,
    pub f5x5: usize,
    pub f_pool_proj: usize,
}

impl InceptionModuleSpec {
    pub const MODULE_3A: Self = InceptionModuleSpec::new(64, 40, 60, 16, 32, 32);
    pub const MODULE_3B: Self = InceptionModuleSpec::new(60, 60, 80, 32, 64, 64);

    pub const fn new(
        f1x1: usize,
        f3x3_reduce: usize,
        f3x3: usize,
        f5x5_reduce: usize,
        f5x5: usize,
        f_pool_proj: usize,
    ) -> Self {
        InceptionModuleSpec {
            f1x1,
            f3x3_reduce,
            f3x3,
            f5x5_reduce,
            f5x5,
            f_pool_proj,
        }
    }

    pub fn output_channels(&self) -> usize {
        self.f1x1 + self.f3x3 + self.f5x5 + self.f_pool_proj
    }

    fn counts(&self) -> [usize; 6] {
        [
            self.f1x1,
            self.f3x3_reduce,
            self.f3x3,
            self.f5x5_reduce,
            self.f5x5,
            self.f_pool_proj,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts().contains(&0) {
            return Err(Error::config(format!(
                "inception filter counts must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    /// Every filter count divided by `divisor`, rounded up.
    pub fn narrowed(&self, divisor: usize) -> Self {
        let d = |c: usize| c.div_ceil(divisor.max(1));
        InceptionModuleSpec::new(
            d(self.f1x1),
            d(self.f3x3_reduce),
            d(self.f3x3),
            d(self.f5x5_reduce),
            d(self.f5x5),
            d(self.f_pool_proj),
        )
    }
}

/// `conv -> relu`, optionally followed by batch-norm.
fn conv_block(
    g: &mut GraphBuilder,
    name: &str,
    x: NodeId,
    filters: usize,
    kernel: usize,
    stride: usize,
    bn: Option<&str>,
) -> Result<NodeId> {
    let conv = g.conv2d(name, x, filters, kernel, stride)?;
    let act = g.relu(&format!("{name}_relu"), conv)?;
    match bn {
        Some(bn_name) => g.batch_norm(bn_name, act),
        None => Ok(act),
    }
}

/// Four parallel branches (1x1, 3x3, 5x5, pool projection) joined on the
/// channel axis. The pool-projection branch carries no batch-norm.
pub fn inception_module(
    g: &mut GraphBuilder,
    prefix: &str,
    x: NodeId,
    spec: &InceptionModuleSpec,
) -> Result<NodeId> {
    spec.validate()?;
    let n = |s: &str| format!("{prefix}_{s}");
    let b1 = conv_block(g, &n("1x1"), x, spec.f1x1, 1, 1, Some(&n("1x1_bn")))?;
    let r3 = conv_block(g, &n("3x3_reduce"), x, spec.f3x3_reduce, 1, 1, None)?;
    let b3 = conv_block(g, &n("3x3"), r3, spec.f3x3, 3, 1, Some(&n("3x3_bn")))?;
    let r5 = conv_block(g, &n("5x5_reduce"), x, spec.f5x5_reduce, 1, 1, None)?;
    let b5 = conv_block(g, &n("5x5"), r5, spec.f5x5, 5, 1, Some(&n("5x5_bn")))?;
    let pool = g.max_pool(&n("pool"), x, 3, 1)?;
    let bp = conv_block(g, &n("pool_proj"), pool, spec.f_pool_proj, 1, 1, None)?;
    g.concat(prefix, &[b1, b3, b5, bp])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmallInceptionConfig {
    pub input_hw: (usize, usize),
    pub channels: usize,
    pub num_outputs: usize,
    /// Divides every convolution width; 1 is the full network.
    pub width_divisor: usize,
    pub dropout: f32,
}

impl Default for SmallInceptionConfig {
    fn default() -> Self {
        SmallInceptionConfig {
            input_hw: (200, 200),
            channels: 3,
            num_outputs: 2,
            width_divisor: 1,
            dropout: 0.5,
        }
    }
}

/// Two convolution stages, two inception modules, global average pooling
/// and a 32-unit dense head.
pub fn build_small_inception(cfg: &SmallInceptionConfig) -> Result<ModelGraph> {
    if cfg.width_divisor == 0 || cfg.num_outputs == 0 {
        return Err(Error::config("width_divisor and num_outputs must be positive"));
    }
    let w = |c: usize| c.div_ceil(cfg.width_divisor);
    let mut g = GraphBuilder::new();
    let x = g.input("input", &[cfg.input_hw.0, cfg.input_hw.1, cfg.channels])?;
    let x = conv_block(&mut g, "conv_1", x, w(32), 5, 2, Some("bn_1"))?;
    let x = g.max_pool("pool_1", x, 3, 2)?;
    let x = conv_block(&mut g, "conv_2a", x, w(64), 3, 1, Some("bn_2"))?;
    let x = g.max_pool("pool_2", x, 3, 2)?;
    let x = inception_module(
        &mut g,
        "inception_3a",
        x,
        &InceptionModuleSpec::MODULE_3A.narrowed(cfg.width_divisor),
    )?;
    let x = g.max_pool("pool_3", x, 3, 2)?;
    let x = inception_module(
        &mut g,
        "inception_3b",
        x,
        &InceptionModuleSpec::MODULE_3B.narrowed(cfg.width_divisor),
    )?;
    let x = g.global_avg_pool("avg_pool", x)?;
    let x = g.dense("dense_final", x, 32)?;
    let x = g.relu("dense_final_relu", x)?;
    let x = g.batch_norm("bn_final", x)?;
    let x = g.dropout("dropout_final", x, cfg.dropout)?;
    let x = g.dense("output", x, cfg.num_outputs)?;
    let out = g.softmax("output_softmax", x)?;
    g.build(out)
}

/// `flatten -> dense 32 -> relu -> dropout -> batch-norm -> dense 2 -> softmax`.
fn binary_head(g: &mut GraphBuilder, x: NodeId, dropout: f32) -> Result<NodeId> {
    let x = g.flatten("flatten", x)?;
    let x = g.dense("dense_1", x, 32)?;
    let x = g.relu("dense_1_relu", x)?;
    let x = g.dropout("dropout", x, dropout)?;
    let x = g.batch_norm("bn", x)?;
    let x = g.dense("output", x, 2)?;
    g.softmax("output_softmax", x)
}

/// The classification head alone, over precomputed features.
pub fn build_binary_head(feature_dim: usize) -> Result<ModelGraph> {
    if feature_dim == 0 {
        return Err(Error::config("feature_dim must be positive"));
    }
    let mut g = GraphBuilder::new();
    let x = g.input("features", &[feature_dim])?;
    let out = binary_head(&mut g, x, 0.5)?;
    g.build(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub backbone: StubConfig,
    pub dropout: f32,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            backbone: StubConfig::default(),
            dropout: 0.5,
        }
    }
}

/// Frozen backbone followed by the trainable binary head.
pub fn build_transfer_model(cfg: &TransferConfig) -> Result<ModelGraph> {
    let b = &cfg.backbone;
    let mut g = GraphBuilder::new();
    let x = g.input("input", &[b.input_hw.0, b.input_hw.1, b.channels])?;
    let x = g.add("backbone", LayerSpec::Backbone(b.clone()), &[x])?;
    let out = binary_head(&mut g, x, cfg.dropout)?;
    g.build(out)
}

/// Architecture choice for one classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Architecture {
    SmallInception(SmallInceptionConfig),
    Transfer(TransferConfig),
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::SmallInception(SmallInceptionConfig::default())
    }
}

impl Architecture {
    pub fn build(&self) -> Result<ModelGraph> {
        match self {
            Architecture::SmallInception(c) => build_small_inception(c),
            Architecture::Transfer(c) => build_transfer_model(c),
        }
    }

    /// `(height, width)` of the images the model consumes.
    pub fn input_hw(&self) -> (usize, usize) {
        match self {
            Architecture::SmallInception(c) => c.input_hw,
            Architecture::Transfer(c) => c.backbone.input_hw,
        }
    }
}
