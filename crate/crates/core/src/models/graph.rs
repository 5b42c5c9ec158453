use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    batchnorm, batchnorm_backward, concat_channels, conv2d, conv2d_backward, dense,
    dense_backward, dropout, dropout_backward, global_avg_pool, global_avg_pool_backward,
    maxpool2d, maxpool2d_backward, relu, relu_backward, softmax, softmax_backward,
    split_channels, BatchNormCache, DropoutMask, LayerGrads, Mode, Padding,
};
use crate::tensor::Tensor;

use super::extractor::{FeatureExtractor, StubFeatureExtractor};
use super::layer::LayerSpec;

pub type NodeId = usize;

/// Every bias starts at this value.
pub const BIAS_INIT: f32 = 0.15;

const DESCRIPTOR_FORMAT: &str = "drsm-graph/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub layer: LayerSpec,
    pub inputs: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    format: String,
    nodes: Vec<NodeSpec>,
    output: String,
}

#[derive(Clone, Debug)]
struct Node {
    spec: NodeSpec,
    inputs: Vec<NodeId>,
    shape: Vec<usize>,
}

/// Named parameter tensors in graph order (`node/param`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightStore(IndexMap<String, Tensor>);

impl WeightStore {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.0.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v))
    }

    fn param(&self, node: &str, suffix: &str) -> &Tensor {
        self.0
            .get(&format!("{node}/{suffix}"))
            .expect("graph parameters are created at build time")
    }
}

/// Incremental, shape-checked construction of a [`ModelGraph`].
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    index: HashMap<String, NodeId>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, layer: LayerSpec, inputs: &[NodeId]) -> Result<NodeId> {
        if name.is_empty() || name.contains('/') {
            return Err(Error::config(format!("invalid node name {name:?}")));
        }
        if self.index.contains_key(name) {
            return Err(Error::config(format!("duplicate node name {name:?}")));
        }
        let is_input = matches!(layer, LayerSpec::Input { .. });
        if is_input != self.nodes.is_empty() {
            return Err(Error::config("the input node must be the first and only input"));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::config(format!("{name}: unknown input node {bad}")));
        }
        let in_shapes: Vec<&[usize]> = inputs.iter().map(|&i| &self.nodes[i].shape[..]).collect();
        let shape = layer
            .infer(&in_shapes)
            .map_err(|e| prefix_error(name, e))?;
        let id = self.nodes.len();
        self.nodes.push(Node {
            spec: NodeSpec {
                name: name.to_string(),
                layer,
                inputs: inputs.iter().map(|&i| self.nodes[i].spec.name.clone()).collect(),
            },
            inputs: inputs.to_vec(),
            shape,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId> {
        self.add(name, LayerSpec::Input { shape: shape.to_vec() }, &[])
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        x: NodeId,
        filters: usize,
        kernel: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let layer = LayerSpec::Conv2d {
            filters,
            kernel,
            stride,
            padding: Padding::Same,
        };
        self.add(name, layer, &[x])
    }

    pub fn max_pool(&mut self, name: &str, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let layer = LayerSpec::MaxPool2d {
            window,
            stride,
            padding: Padding::Same,
        };
        self.add(name, layer, &[x])
    }

    pub fn batch_norm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, LayerSpec::batch_norm(), &[x])
    }

    pub fn relu(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, LayerSpec::Relu, &[x])
    }

    pub fn dense(&mut self, name: &str, x: NodeId, units: usize) -> Result<NodeId> {
        self.add(name, LayerSpec::Dense { units }, &[x])
    }

    pub fn dropout(&mut self, name: &str, x: NodeId, rate: f32) -> Result<NodeId> {
        self.add(name, LayerSpec::Dropout { rate }, &[x])
    }

    pub fn softmax(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, LayerSpec::Softmax, &[x])
    }

    pub fn concat(&mut self, name: &str, xs: &[NodeId]) -> Result<NodeId> {
        self.add(name, LayerSpec::Concat, xs)
    }

    pub fn global_avg_pool(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, LayerSpec::GlobalAvgPool, &[x])
    }

    pub fn flatten(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        self.add(name, LayerSpec::Flatten, &[x])
    }

    /// Finalizes the graph with default parameters (zero kernels and biases,
    /// unit gamma and running variance); call [`ModelGraph::init_weights`]
    /// before training.
    pub fn build(self, output: NodeId) -> Result<ModelGraph> {
        if output >= self.nodes.len() {
            return Err(Error::config("output node does not exist"));
        }
        let mut weights = IndexMap::new();
        let mut backbones = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let input_shape = node
                .inputs
                .first()
                .map(|&i| self.nodes[i].shape.clone())
                .unwrap_or_default();
            for (suffix, shape, _) in node.spec.layer.params(&input_shape) {
                let fill = if matches!(suffix, "gamma" | "moving_variance") { 1.0 } else { 0.0 };
                weights.insert(format!("{}/{suffix}", node.spec.name), Tensor::full(&shape, fill));
            }
            backbones.push(match &node.spec.layer {
                LayerSpec::Backbone(cfg) => Some(Arc::new(StubFeatureExtractor::new(cfg.clone())?)),
                _ => None,
            });
        }
        Ok(ModelGraph {
            nodes: self.nodes,
            output,
            weights: WeightStore(weights),
            backbones,
        })
    }
}

fn prefix_error(name: &str, e: Error) -> Error {
    match e {
        Error::ShapeMismatch(m) => Error::ShapeMismatch(format!("{name}: {m}")),
        Error::InvalidConfig(m) => Error::InvalidConfig(format!("{name}: {m}")),
        other => other,
    }
}

/// A validated DAG of layers and its parameters.
#[derive(Clone)]
pub struct ModelGraph {
    nodes: Vec<Node>,
    output: NodeId,
    weights: WeightStore,
    backbones: Vec<Option<Arc<StubFeatureExtractor>>>,
}

impl std::fmt::Debug for ModelGraph {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModelGraph")
            .field("nodes", &self.nodes.len())
            .field("input", &self.input_shape())
            .field("output", &self.output_shape())
            .field("params", &self.trainable_param_count())
            .finish()
    }
}

enum Cache {
    None,
    BatchNorm(BatchNormCache),
    Dropout(DropoutMask),
}

/// Per-node activations and caches from one forward pass, consumed by
/// [`ModelGraph::backward`].
pub struct Trace {
    outputs: Vec<Tensor>,
    caches: Vec<Cache>,
    output: NodeId,
    logits: Option<NodeId>,
}

impl Trace {
    pub fn output(&self) -> &Tensor {
        &self.outputs[self.output]
    }

    /// Input of the final softmax, when the graph ends in one.
    pub fn logits(&self) -> Option<&Tensor> {
        self.logits.map(|i| &self.outputs[i])
    }
}

pub type Gradients = IndexMap<String, Tensor>;

impl ModelGraph {
    pub fn from_descriptor(text: &str) -> Result<Self> {
        let desc: Descriptor = serde_json::from_str(text)
            .map_err(|e| Error::Format(format!("bad architecture descriptor: {e}")))?;
        if desc.format != DESCRIPTOR_FORMAT {
            return Err(Error::Format(format!(
                "unsupported descriptor format {:?}",
                desc.format
            )));
        }
        let mut g = GraphBuilder::new();
        for node in desc.nodes {
            let inputs = node
                .inputs
                .iter()
                .map(|n| {
                    g.index
                        .get(n)
                        .copied()
                        .ok_or_else(|| Error::Format(format!("{}: unknown input {n:?}", node.name)))
                })
                .collect::<Result<Vec<_>>>()?;
            g.add(&node.name, node.layer, &inputs)?;
        }
        let output = *g
            .index
            .get(&desc.output)
            .ok_or_else(|| Error::Format(format!("unknown output node {:?}", desc.output)))?;
        g.build(output)
    }

    /// Canonical architecture text: nodes and hyperparameters in build order.
    pub fn descriptor(&self) -> String {
        let desc = Descriptor {
            format: DESCRIPTOR_FORMAT.to_string(),
            nodes: self.nodes.iter().map(|n| n.spec.clone()).collect(),
            output: self.nodes[self.output].spec.name.clone(),
        };
        serde_json::to_string(&desc).expect("descriptor serializes")
    }

    pub fn node_specs(&self) -> impl Iterator<Item = (&NodeSpec, &[usize])> {
        self.nodes.iter().map(|n| (&n.spec, &n.shape[..]))
    }

    /// Per-item shape of the named node's output.
    pub fn node_shape(&self, name: &str) -> Option<&[usize]> {
        self.nodes
            .iter()
            .find(|n| n.spec.name == name)
            .map(|n| &n.shape[..])
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].shape
    }

    pub fn weights(&self) -> &WeightStore {
        &self.weights
    }

    /// Replaces one parameter, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .weights
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("no parameter named {name:?}")))?;
        slot.ensure_same_shape(&value, name)?;
        *slot = value;
        Ok(())
    }

    /// Names of the parameters updated by gradient descent, in graph order.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for node in &self.nodes {
            for (suffix, _, trainable) in node.spec.layer.params(&self.first_input_shape(node)) {
                if trainable {
                    names.push(format!("{}/{suffix}", node.spec.name));
                }
            }
        }
        names
    }

    pub fn trainable_param_count(&self) -> usize {
        self.trainable_names()
            .iter()
            .map(|n| self.weights.get(n).map_or(0, Tensor::len))
            .sum()
    }

    pub fn backbone(&self) -> Option<&dyn FeatureExtractor> {
        self.backbones
            .iter()
            .flatten()
            .next()
            .map(|b| b.as_ref() as &dyn FeatureExtractor)
    }

    fn first_input_shape(&self, node: &Node) -> Vec<usize> {
        node.inputs
            .first()
            .map(|&i| self.nodes[i].shape.clone())
            .unwrap_or_default()
    }

    /// He-uniform kernels, constant biases, unit gamma, zero beta, and fresh
    /// running statistics. A pure function of architecture and seed.
    pub fn init_weights(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (name, tensor) in self.weights.0.iter_mut() {
            let suffix = name.rsplit('/').next().unwrap_or_default();
            match suffix {
                "kernel" | "weights" => {
                    let shape = tensor.shape();
                    let fan_in: usize = shape[..shape.len() - 1].iter().product();
                    let bound = (6.0 / fan_in as f32).sqrt();
                    for v in tensor.data_mut() {
                        *v = he_uniform(&mut rng, bound);
                    }
                }
                "bias" => tensor.data_mut().fill(BIAS_INIT),
                "gamma" | "moving_variance" => tensor.data_mut().fill(1.0),
                _ => tensor.data_mut().fill(0.0),
            }
        }
    }

    /// Forward pass returning the output node's value. Train mode updates
    /// batch-norm running statistics.
    pub fn forward(&mut self, batch: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor> {
        let (mut outputs, _, updates) = self.run(batch, mode, rng, false)?;
        self.apply_updates(updates);
        Ok(outputs.swap_remove(self.output).expect("output is retained"))
    }

    /// Inference-mode forward pass; never mutates the model.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (mut outputs, _, _) = self.run(batch, Mode::Infer, &mut rng, false)?;
        Ok(outputs.swap_remove(self.output).expect("output is retained"))
    }

    /// Forward pass that keeps everything [`ModelGraph::backward`] needs.
    pub fn forward_trace(&mut self, batch: &Tensor, mode: Mode, rng: &mut dyn RngCore) -> Result<Trace> {
        let (outputs, caches, updates) = self.run(batch, mode, rng, true)?;
        self.apply_updates(updates);
        let logits = match self.nodes[self.output].spec.layer {
            LayerSpec::Softmax => Some(self.nodes[self.output].inputs[0]),
            _ => None,
        };
        Ok(Trace {
            outputs: outputs.into_iter().map(|o| o.expect("trace keeps all outputs")).collect(),
            caches,
            output: self.output,
            logits,
        })
    }

    fn apply_updates(&mut self, updates: Vec<(String, Tensor)>) {
        for (name, value) in updates {
            *self.weights.0.get_mut(&name).expect("running statistic exists") = value;
        }
    }

    #[allow(clippy::type_complexity)]
    fn run(
        &self,
        batch: &Tensor,
        mode: Mode,
        rng: &mut dyn RngCore,
        keep_all: bool,
    ) -> Result<(Vec<Option<Tensor>>, Vec<Cache>, Vec<(String, Tensor)>)> {
        let want_rank = self.input_shape().len() + 1;
        if batch.rank() != want_rank || batch.shape()[1..] != *self.input_shape() || batch.batch() == 0 {
            return Err(Error::shape(format!(
                "model expects [n, {}], got {:?}",
                self.input_shape()
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
                batch.shape()
            )));
        }
        let n_nodes = self.nodes.len();
        let mut last_use = vec![0usize; n_nodes];
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = id;
            }
        }
        last_use[self.output] = usize::MAX;

        let mut outputs: Vec<Option<Tensor>> = (0..n_nodes).map(|_| None).collect();
        let mut caches = Vec::with_capacity(n_nodes);
        let mut updates = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            let name = &node.spec.name;
            let ins: Vec<&Tensor> = node
                .inputs
                .iter()
                .map(|&i| outputs[i].as_ref().expect("inputs precede consumers"))
                .collect();
            let mut cache = Cache::None;
            let out = match node.spec.layer {
                LayerSpec::Input { .. } => batch.clone(),
                LayerSpec::Conv2d { stride, padding, .. } => conv2d(
                    ins[0],
                    self.weights.param(name, "kernel"),
                    self.weights.param(name, "bias"),
                    stride,
                    padding,
                )?,
                LayerSpec::MaxPool2d {
                    window,
                    stride,
                    padding,
                } => maxpool2d(ins[0], window, stride, padding)?,
                LayerSpec::BatchNorm { momentum, epsilon } => {
                    let mut mean = self.weights.param(name, "moving_mean").clone();
                    let mut var = self.weights.param(name, "moving_variance").clone();
                    let (out, c) = batchnorm(
                        ins[0],
                        self.weights.param(name, "gamma"),
                        self.weights.param(name, "beta"),
                        &mut mean,
                        &mut var,
                        mode,
                        momentum,
                        epsilon,
                    )?;
                    if mode == Mode::Train {
                        updates.push((format!("{name}/moving_mean"), mean));
                        updates.push((format!("{name}/moving_variance"), var));
                    }
                    cache = Cache::BatchNorm(c);
                    out
                }
                LayerSpec::Dropout { rate } => {
                    let (out, mask) = dropout(ins[0], rate, mode, rng)?;
                    cache = Cache::Dropout(mask);
                    out
                }
                LayerSpec::Dense { .. } => dense(
                    ins[0],
                    self.weights.param(name, "weights"),
                    self.weights.param(name, "bias"),
                )?,
                LayerSpec::Relu => relu(ins[0]),
                LayerSpec::Softmax => softmax(ins[0])?,
                LayerSpec::Concat => concat_channels(&ins)?,
                LayerSpec::GlobalAvgPool => global_avg_pool(ins[0])?,
                LayerSpec::Flatten => {
                    let n = ins[0].batch();
                    ins[0].clone().reshape(&[n, ins[0].len() / n])?
                }
                LayerSpec::Backbone(_) => self.backbones[id]
                    .as_ref()
                    .expect("backbone built with graph")
                    .extract(ins[0])?,
            };
            caches.push(cache);
            outputs[id] = Some(out);
            if !keep_all {
                for &i in &node.inputs {
                    if last_use[i] == id {
                        outputs[i] = None;
                    }
                }
            }
        }
        Ok((outputs, caches, updates))
    }

    /// Gradients of a scalar loss with respect to every trainable parameter,
    /// given the loss gradient at the graph output.
    pub fn backward(&self, trace: &Trace, upstream: &Tensor) -> Result<Gradients> {
        self.backward_from(trace, self.output, upstream)
    }

    /// As [`ModelGraph::backward`], with the gradient given at the input of
    /// the final softmax.
    pub fn backward_from_logits(&self, trace: &Trace, upstream: &Tensor) -> Result<Gradients> {
        let start = trace
            .logits
            .ok_or_else(|| Error::config("graph does not end in a softmax"))?;
        self.backward_from(trace, start, upstream)
    }

    fn backward_from(&self, trace: &Trace, start: NodeId, upstream: &Tensor) -> Result<Gradients> {
        trace.outputs[start].ensure_same_shape(upstream, "backward upstream")?;
        let mut pending: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        pending[start] = Some(upstream.clone());
        let mut grads: Vec<(String, Tensor)> = Vec::new();

        for id in (0..=start).rev() {
            let Some(g) = pending[id].take() else { continue };
            let node = &self.nodes[id];
            let name = &node.spec.name;
            let x = |k: usize| &trace.outputs[node.inputs[k]];
            let lg: Option<LayerGrads> = match node.spec.layer {
                LayerSpec::Input { .. } | LayerSpec::Backbone(_) => None,
                LayerSpec::Conv2d { stride, padding, .. } => Some(conv2d_backward(
                    x(0),
                    self.weights.param(name, "kernel"),
                    &g,
                    stride,
                    padding,
                )?),
                LayerSpec::MaxPool2d {
                    window,
                    stride,
                    padding,
                } => Some(maxpool2d_backward(x(0), &g, window, stride, padding)?),
                LayerSpec::BatchNorm { .. } => {
                    let Cache::BatchNorm(cache) = &trace.caches[id] else {
                        unreachable!("batch-norm nodes cache their statistics")
                    };
                    Some(batchnorm_backward(cache, self.weights.param(name, "gamma"), &g)?)
                }
                LayerSpec::Dropout { .. } => {
                    let Cache::Dropout(mask) = &trace.caches[id] else {
                        unreachable!("dropout nodes cache their mask")
                    };
                    Some(dropout_backward(mask, &g)?)
                }
                LayerSpec::Dense { .. } => {
                    Some(dense_backward(x(0), self.weights.param(name, "weights"), &g)?)
                }
                LayerSpec::Relu => Some(relu_backward(x(0), &g)?),
                LayerSpec::Softmax => Some(softmax_backward(&trace.outputs[id], &g)?),
                LayerSpec::GlobalAvgPool => Some(global_avg_pool_backward(x(0), &g)?),
                LayerSpec::Flatten => {
                    let shape = x(0).shape().to_vec();
                    accumulate(&mut pending, node.inputs[0], g.reshape(&shape)?)?;
                    None
                }
                LayerSpec::Concat => {
                    let widths: Vec<usize> = (0..node.inputs.len()).map(|k| x(k).channels()).collect();
                    for (k, part) in split_channels(&g, &widths)?.into_iter().enumerate() {
                        accumulate(&mut pending, node.inputs[k], part)?;
                    }
                    None
                }
            };
            if let Some(lg) = lg {
                for (suffix, t) in lg.param_grads {
                    grads.push((format!("{name}/{suffix}"), t));
                }
                if let Some(&i) = node.inputs.first() {
                    if i != 0 {
                        accumulate(&mut pending, i, lg.input_grad)?;
                    }
                }
            }
        }

        let mut by_name: HashMap<String, Tensor> = grads.into_iter().collect();
        let mut out = IndexMap::new();
        for name in self.trainable_names() {
            let g = by_name.remove(&name).unwrap_or_else(|| {
                Tensor::zeros(self.weights.get(&name).expect("trainable exists").shape())
            });
            out.insert(name, g);
        }
        Ok(out)
    }
}

fn accumulate(pending: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut pending[id] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Uniform on the open interval `(-bound, bound)`.
fn he_uniform(rng: &mut ChaCha8Rng, bound: f32) -> f32 {
    loop {
        let v = rng.gen_range(-bound..bound);
        if v.abs() < bound {
            return v;
        }
    }
}
