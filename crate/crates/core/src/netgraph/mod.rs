//! Layer-level network description compiled onto the expression graph.

mod dataset;
mod format;
mod train;

pub use dataset::{generate_synthetic_dataset, read_idx_dataset, write_idx, Dataset, Split, SyntheticConfig};
pub use format::{load_dataset, load_model, save_dataset, save_model, weights_digest, FORMAT_VERSION};
pub use train::{evaluate_loss, sgd_train, TrainHyper, TrainReport};

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensorcore::{Bindings, Evaluation, ExprGraph, NodeId, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown layer `{0}`")]
    UnknownLayer(String),
    #[error("layer `{0}` already exists")]
    DuplicateLayer(String),
    #[error("bad wiring at layer `{layer}`: {detail}")]
    Wiring { layer: String, detail: String },
    #[error("parameter `{name}` has shape {actual:?}, layer declares {expected:?}")]
    ParamShape {
        name: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("batch shape {actual:?} does not match input shape {expected:?}")]
    BatchShape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("invalid unit: {0}")]
    BadUnit(String),
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyper(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("label {label} outside {classes} classes")]
    BadLabel { label: usize, classes: usize },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("weight blob truncated: need {needed} bytes, found {found}")]
    Truncated { needed: usize, found: usize },
    #[error("manifest references missing tensor `{0}`")]
    MissingTensor(String),
    #[error("malformed IDX file: {0}")]
    Idx(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Input,
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
        eps: f64,
    },
    /// Sum of two equally shaped inputs.
    Add,
    Flatten,
    /// Learned per-channel offset.
    Bias {
        channels: usize,
    },
    /// Concatenation of flat inputs.
    Concat,
    /// Heaviside step: `1` where the input is `>= 0`.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LayerKind,
    pub inputs: Vec<String>,
    #[serde(default = "default_true")]
    pub trainable: bool,
}

fn default_true() -> bool {
    true
}

impl LayerKind {
    /// Parameter suffixes and their shapes.
    fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel[0], kernel[1]]),
                ("bias", vec![out_channels]),
            ],
            LayerKind::Dense {
                in_features,
                out_features,
            } => vec![("weight", vec![in_features, out_features]), ("bias", vec![out_features])],
            LayerKind::BatchNorm { channels, .. } => vec![
                ("gamma", vec![channels]),
                ("beta", vec![channels]),
                ("running_mean", vec![channels]),
                ("running_var", vec![channels]),
            ],
            LayerKind::Bias { channels } => vec![("bias", vec![channels])],
            _ => vec![],
        }
    }

    fn learnable_suffix(&self, suffix: &str) -> bool {
        !matches!(self, LayerKind::BatchNorm { .. }) || matches!(suffix, "gamma" | "beta")
    }
}

/// Where on a layer's output a visualization target sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitPosition {
    /// Mean over all spatial positions of the channel.
    ChannelMean,
    At { y: usize, x: usize },
}

/// A unit (or channel) of a named layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitRef {
    pub layer: String,
    pub channel: usize,
    pub position: UnitPosition,
}

impl UnitRef {
    pub fn channel_mean(layer: &str, channel: usize) -> Self {
        Self {
            layer: layer.to_string(),
            channel,
            position: UnitPosition::ChannelMean,
        }
    }

    pub fn at(layer: &str, channel: usize, y: usize, x: usize) -> Self {
        Self {
            layer: layer.to_string(),
            channel,
            position: UnitPosition::At { y, x },
        }
    }
}

impl std::fmt::Display for UnitRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.position {
            UnitPosition::ChannelMean => write!(f, "{}:{}", self.layer, self.channel),
            UnitPosition::At { y, x } => write!(f, "{}:{}@{},{}", self.layer, self.channel, y, x),
        }
    }
}

/// Parses the `Display` form: `layer:channel` or `layer:channel@y,x`.
impl std::str::FromStr for UnitRef {
    type Err = NetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || NetError::BadUnit(format!("`{s}` is not `layer:channel[@y,x]`"));
        let (layer, rest) = s.rsplit_once(':').ok_or_else(bad)?;
        if layer.is_empty() {
            return Err(bad());
        }
        let (channel, pos) = match rest.split_once('@') {
            Some((c, p)) => (c, Some(p)),
            None => (rest, None),
        };
        let channel = channel.parse().map_err(|_| bad())?;
        match pos {
            None => Ok(UnitRef::channel_mean(layer, channel)),
            Some(p) => {
                let (y, x) = p.split_once(',').ok_or_else(bad)?;
                Ok(UnitRef::at(layer, channel, y.parse().map_err(|_| bad())?, x.parse().map_err(|_| bad())?))
            }
        }
    }
}

/// A directed acyclic network of named layers. Layers are kept in
/// topological order; every layer's inputs name earlier layers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGraph {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
    shapes: Vec<Vec<usize>>,
    params: BTreeMap<String, Tensor>,
    output: String,
    /// Free-form provenance recorded by graph transforms (attack specs).
    pub attack: Option<serde_json::Value>,
}

pub const INPUT_LAYER: &str = "input";

/// A graph compiled for one batch size.
pub struct Compiled {
    pub graph: ExprGraph,
    pub input: NodeId,
    layer_nodes: HashMap<String, NodeId>,
    pub output: NodeId,
}

impl Compiled {
    pub fn layer_node(&self, name: &str) -> Option<NodeId> {
        self.layer_nodes.get(name).copied()
    }
}

impl LayerGraph {
    pub fn new(input_shape: [usize; 3]) -> Self {
        Self {
            input_shape,
            layers: vec![LayerSpec {
                name: INPUT_LAYER.to_string(),
                kind: LayerKind::Input,
                inputs: vec![],
                trainable: false,
            }],
            shapes: vec![input_shape.to_vec()],
            params: BTreeMap::new(),
            output: INPUT_LAYER.to_string(),
            attack: None,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&LayerSpec> {
        self.layers.iter().find(|l| l.name == name)
    }

    fn index_of(&self, name: &str) -> Result<usize, NetError> {
        self.layers
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| NetError::UnknownLayer(name.to_string()))
    }

    /// Output shape of a layer, without the batch axis.
    pub fn layer_shape(&self, name: &str) -> Result<&[usize], NetError> {
        Ok(&self.shapes[self.index_of(name)?])
    }

    pub fn output(&self) -> &str {
        &self.output
    }

    pub fn output_len(&self) -> usize {
        self.shapes[self.index_of(&self.output).expect("output exists")].iter().product()
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Result<&Tensor, NetError> {
        self.params.get(name).ok_or_else(|| NetError::MissingParam(name.to_string()))
    }

    /// Replaces a parameter, enforcing the declared shape.
    pub fn set_param(&mut self, name: &str, value: Tensor) -> Result<(), NetError> {
        let current = self.param(name)?;
        if current.shape() != value.shape() {
            return Err(NetError::ParamShape {
                name: name.to_string(),
                expected: current.shape().to_vec(),
                actual: value.shape().to_vec(),
            });
        }
        self.params.insert(name.to_string(), value);
        Ok(())
    }

    /// Names of parameters updated by training.
    pub fn trainable_params(&self) -> Vec<String> {
        self.layers
            .iter()
            .filter(|l| l.trainable)
            .flat_map(|l| {
                l.kind
                    .param_shapes()
                    .into_iter()
                    .filter(|(s, _)| l.kind.learnable_suffix(s))
                    .map(move |(s, _)| format!("{}.{}", l.name, s))
            })
            .collect()
    }

    fn infer_shape(&self, name: &str, kind: &LayerKind, inputs: &[Vec<usize>]) -> Result<Vec<usize>, NetError> {
        let wiring = |detail: String| NetError::Wiring {
            layer: name.to_string(),
            detail,
        };
        let single = || -> Result<&Vec<usize>, NetError> {
            if inputs.len() != 1 {
                return Err(wiring(format!("expects one input, got {}", inputs.len())));
            }
            Ok(&inputs[0])
        };
        match kind {
            LayerKind::Input => Err(wiring("only one input layer is allowed".into())),
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
            } => {
                let s = single()?;
                if s.len() != 3 || s[0] != *in_channels {
                    return Err(wiring(format!("conv expects [{in_channels}, H, W], got {s:?}")));
                }
                if *stride == 0 || s[1] + 2 * padding < kernel[0] || s[2] + 2 * padding < kernel[1] {
                    return Err(wiring(format!("kernel {kernel:?} does not fit {s:?}")));
                }
                Ok(vec![
                    *out_channels,
                    (s[1] + 2 * padding - kernel[0]) / stride + 1,
                    (s[2] + 2 * padding - kernel[1]) / stride + 1,
                ])
            }
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let s = single()?;
                if s.len() != 1 || s[0] != *in_features {
                    return Err(wiring(format!("dense expects [{in_features}], got {s:?}")));
                }
                Ok(vec![*out_features])
            }
            LayerKind::Relu | LayerKind::Step => Ok(single()?.clone()),
            LayerKind::BatchNorm { channels, .. } | LayerKind::Bias { channels } => {
                let s = single()?;
                if s[0] != *channels {
                    return Err(wiring(format!("expects {channels} channels, got {s:?}")));
                }
                Ok(s.clone())
            }
            LayerKind::Add => {
                if inputs.len() != 2 || inputs[0] != inputs[1] {
                    return Err(wiring(format!("add needs two equal shapes, got {inputs:?}")));
                }
                Ok(inputs[0].clone())
            }
            LayerKind::Flatten => Ok(vec![single()?.iter().product()]),
            LayerKind::Concat => {
                if inputs.is_empty() || inputs.iter().any(|s| s.len() != 1) {
                    return Err(wiring(format!("concat needs flat inputs, got {inputs:?}")));
                }
                Ok(vec![inputs.iter().map(|s| s[0]).sum()])
            }
        }
    }

    /// Appends a layer after its inputs; parameters start at zero (see [`LayerGraph::init_params`]).
    pub fn add_layer(&mut self, name: &str, kind: LayerKind, inputs: &[&str]) -> Result<(), NetError> {
        if self.layer(name).is_some() {
            return Err(NetError::DuplicateLayer(name.to_string()));
        }
        let in_shapes = inputs
            .iter()
            .map(|i| self.layer_shape(i).map(|s| s.to_vec()))
            .collect::<Result<Vec<_>, _>>()?;
        let shape = self.infer_shape(name, &kind, &in_shapes)?;
        for (suffix, pshape) in kind.param_shapes() {
            let init = if suffix == "gamma" || suffix == "running_var" { 1.0 } else { 0.0 };
            self.params.insert(format!("{name}.{suffix}"), Tensor::full(&pshape, init));
        }
        self.layers.push(LayerSpec {
            name: name.to_string(),
            kind,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            trainable: true,
        });
        self.shapes.push(shape);
        Ok(())
    }

    pub fn set_output(&mut self, name: &str) -> Result<(), NetError> {
        self.index_of(name)?;
        self.output = name.to_string();
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<(), NetError> {
        let i = self.index_of(name)?;
        self.layers[i].trainable = trainable;
        Ok(())
    }

    /// Points every consumer of `from` (other than `except`) at `to` instead.
    pub fn rewire_consumers(&mut self, from: &str, to: &str, except: &[&str]) -> Result<(), NetError> {
        self.index_of(from)?;
        let to_idx = self.index_of(to)?;
        let mut moved = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            if except.contains(&layer.name.as_str()) || layer.name == to {
                continue;
            }
            if layer.inputs.iter().any(|s| s == from) {
                for s in layer.inputs.iter_mut().filter(|s| s.as_str() == from) {
                    *s = to.to_string();
                }
                if i < to_idx {
                    moved.push(i);
                }
            }
        }
        if !moved.is_empty() {
            self.reorder()?;
        }
        if self.output == from && !except.contains(&to) {
            self.output = to.to_string();
        }
        Ok(())
    }

    /// Layers that read from `name`.
    pub fn consumers(&self, name: &str) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| l.inputs.iter().any(|i| i == name))
            .map(|l| l.name.as_str())
            .collect()
    }

    /// Copies every non-input layer of `other` under `prefix`, feeding its
    /// input from this graph's input. Copied layers are frozen. Returns the
    /// new name of `other`'s output layer.
    pub fn merge_subgraph(&mut self, other: &LayerGraph, prefix: &str) -> Result<String, NetError> {
        if other.input_shape != self.input_shape {
            return Err(NetError::Wiring {
                layer: prefix.to_string(),
                detail: format!("subgraph input {:?} vs {:?}", other.input_shape, self.input_shape),
            });
        }
        let rename = |n: &str| {
            if n == INPUT_LAYER {
                INPUT_LAYER.to_string()
            } else {
                format!("{prefix}{n}")
            }
        };
        for layer in other.layers.iter().skip(1) {
            let name = rename(&layer.name);
            let inputs: Vec<String> = layer.inputs.iter().map(|i| rename(i)).collect();
            let refs: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
            self.add_layer(&name, layer.kind.clone(), &refs)?;
            self.set_trainable(&name, false)?;
            for (suffix, _) in layer.kind.param_shapes() {
                let value = other.param(&format!("{}.{}", layer.name, suffix))?.clone();
                self.set_param(&format!("{name}.{suffix}"), value)?;
            }
        }
        Ok(rename(&other.output))
    }

    /// Restores topological order after rewiring (stable Kahn ordering).
    fn reorder(&mut self) -> Result<(), NetError> {
        let n = self.layers.len();
        let mut placed = vec![false; n];
        let mut order = Vec::with_capacity(n);
        while order.len() < n {
            let next = (0..n).find(|&i| {
                !placed[i]
                    && self.layers[i]
                        .inputs
                        .iter()
                        .all(|inp| order.iter().any(|&j: &usize| self.layers[j].name == *inp))
            });
            match next {
                Some(i) => {
                    placed[i] = true;
                    order.push(i);
                }
                None => {
                    return Err(NetError::Wiring {
                        layer: self.output.clone(),
                        detail: "rewiring introduced a cycle".into(),
                    })
                }
            }
        }
        self.layers = order.iter().map(|&i| self.layers[i].clone()).collect();
        self.shapes = order.iter().map(|&i| self.shapes[i].clone()).collect();
        Ok(())
    }

    /// Kaiming-uniform weights, zero biases, identity batch norm.
    pub fn init_params(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &self.layers {
            let (fan_in, wname) = match layer.kind {
                LayerKind::Conv {
                    in_channels, kernel, ..
                } => (in_channels * kernel[0] * kernel[1], format!("{}.weight", layer.name)),
                LayerKind::Dense { in_features, .. } => (in_features, format!("{}.weight", layer.name)),
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = self.params.get_mut(&wname).expect("declared weight");
            for v in w.data_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    /// Checks the structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<(), NetError> {
        let mut rebuilt = LayerGraph::new(self.input_shape);
        for layer in self.layers.iter().skip(1) {
            let inputs: Vec<&str> = layer.inputs.iter().map(|s| s.as_str()).collect();
            rebuilt.add_layer(&layer.name, layer.kind.clone(), &inputs)?;
        }
        if self.layers.first().map(|l| &l.kind) != Some(&LayerKind::Input) {
            return Err(NetError::Manifest("first layer must be the input".into()));
        }
        self.index_of(&self.output)?;
        for (name, expected) in &rebuilt.params {
            let actual = self.param(name)?;
            if actual.shape() != expected.shape() {
                return Err(NetError::ParamShape {
                    name: name.clone(),
                    expected: expected.shape().to_vec(),
                    actual: actual.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    pub(crate) fn from_parts(
        input_shape: [usize; 3],
        layers: Vec<LayerSpec>,
        params: BTreeMap<String, Tensor>,
        output: String,
        attack: Option<serde_json::Value>,
    ) -> Result<Self, NetError> {
        let mut rebuilt = LayerGraph::new(input_shape);
        for layer in layers.iter().skip(1) {
            let inputs: Vec<&str> = layer.inputs.iter().map(|s| s.as_str()).collect();
            rebuilt.add_layer(&layer.name, layer.kind.clone(), &inputs)?;
        }
        let graph = LayerGraph {
            input_shape,
            shapes: rebuilt.shapes,
            layers,
            params,
            output,
            attack,
        };
        graph.validate()?;
        Ok(graph)
    }

    /// Compiles the network for a batch of `batch` images. Parameters become
    /// graph inputs named after themselves; the images bind to `"input"`.
    pub fn compile(&self, batch: usize) -> Result<Compiled, NetError> {
        let mut g = ExprGraph::new();
        let mut nodes: HashMap<String, NodeId> = HashMap::new();
        let param_node = |g: &mut ExprGraph, name: String| -> Result<NodeId, NetError> {
            let shape = self.param(&name)?.shape().to_vec();
            Ok(g.input(&name, &shape)?)
        };
        let [c, h, w] = self.input_shape;
        let input = g.input(INPUT_LAYER, &[batch, c, h, w])?;
        nodes.insert(INPUT_LAYER.to_string(), input);
        for layer in self.layers.iter().skip(1) {
            let ins: Vec<NodeId> = layer
                .inputs
                .iter()
                .map(|i| nodes.get(i).copied().ok_or_else(|| NetError::UnknownLayer(i.clone())))
                .collect::<Result<_, _>>()?;
            let p = |s: &str| format!("{}.{}", layer.name, s);
            let node = match &layer.kind {
                LayerKind::Input => unreachable!("input is the first layer"),
                LayerKind::Conv { stride, padding, .. } => {
                    let k = param_node(&mut g, p("weight"))?;
                    let b = param_node(&mut g, p("bias"))?;
                    let conv = g.conv2d(ins[0], k, *stride, *padding)?;
                    g.bias_add(conv, b)?
                }
                LayerKind::Dense { .. } => {
                    let wgt = param_node(&mut g, p("weight"))?;
                    let b = param_node(&mut g, p("bias"))?;
                    let mm = g.matmul(ins[0], wgt)?;
                    g.bias_add(mm, b)?
                }
                LayerKind::Relu => g.relu(ins[0]),
                LayerKind::Step => g.step(ins[0]),
                LayerKind::BatchNorm { eps, .. } => {
                    let gamma = param_node(&mut g, p("gamma"))?;
                    let beta = param_node(&mut g, p("beta"))?;
                    let mean = param_node(&mut g, p("running_mean"))?;
                    let var = param_node(&mut g, p("running_var"))?;
                    g.batch_norm(ins[0], gamma, beta, mean, var, *eps)?
                }
                LayerKind::Bias { .. } => {
                    let b = param_node(&mut g, p("bias"))?;
                    g.bias_add(ins[0], b)?
                }
                LayerKind::Add => g.add(ins[0], ins[1])?,
                LayerKind::Flatten => {
                    let n: usize = g.shape(ins[0])[1..].iter().product();
                    g.reshape(ins[0], &[batch, n])?
                }
                LayerKind::Concat => g.concat(&ins)?,
            };
            g.set_label(node, layer.name.clone());
            nodes.insert(layer.name.clone(), node);
        }
        let output = nodes[&self.output];
        g.set_output(&self.output, output);
        Ok(Compiled {
            graph: g,
            input,
            layer_nodes: nodes,
            output,
        })
    }

    pub(crate) fn bindings<'a>(&'a self, batch: &'a Tensor) -> Bindings<'a> {
        let mut b = Bindings::new().bind(INPUT_LAYER, batch);
        for (name, t) in &self.params {
            b.insert(name, t);
        }
        b
    }

    fn check_batch(&self, batch: &Tensor) -> Result<usize, NetError> {
        let s = batch.shape();
        if s.len() != 4 || s[1..] != self.input_shape {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(NetError::BatchShape {
                expected,
                actual: s.to_vec(),
            });
        }
        Ok(s[0])
    }

    /// Runs a compiled graph on `batch`, returning every node value.
    pub fn run(&self, compiled: &Compiled, batch: &Tensor) -> Result<Evaluation, NetError> {
        self.check_batch(batch)?;
        Ok(compiled.graph.evaluate(&self.bindings(batch))?)
    }

    /// Forward pass returning the activations of each tapped layer and the
    /// designated output (batch axis first).
    pub fn forward_with_taps(&self, batch: &Tensor, taps: &[&str]) -> Result<BTreeMap<String, Tensor>, NetError> {
        for t in taps {
            self.index_of(t)?;
        }
        let n = self.check_batch(batch)?;
        let compiled = self.compile(n)?;
        let eval = self.run(&compiled, batch)?;
        let mut out = BTreeMap::new();
        for name in taps.iter().copied().chain(std::iter::once(self.output.as_str())) {
            let node = compiled.layer_node(name).expect("compiled layer");
            out.insert(name.to_string(), eval.value(node).clone());
        }
        Ok(out)
    }

    /// Output activations `[N, K]` for a batch.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor, NetError> {
        let n = self.check_batch(batch)?;
        let compiled = self.compile(n)?;
        let eval = self.run(&compiled, batch)?;
        let out = eval.into_value(compiled.output);
        let k = out.len() / n;
        Ok(out.reshape(vec![n, k])?)
    }

    /// Class ids: argmax with ties to the lowest index; a single-output
    /// network is read as a logit thresholded at zero.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>, NetError> {
        let out = self.forward(batch)?;
        Ok(argmax_rows(&out))
    }

    pub fn validate_unit(&self, unit: &UnitRef) -> Result<(), NetError> {
        let shape = self.layer_shape(&unit.layer)?;
        if unit.channel >= shape[0] {
            return Err(NetError::BadUnit(format!("channel {} outside {shape:?}", unit.channel)));
        }
        if let UnitPosition::At { y, x } = unit.position {
            if shape.len() != 3 || y >= shape[1] || x >= shape[2] {
                return Err(NetError::BadUnit(format!("position ({y}, {x}) outside {shape:?}")));
            }
        }
        Ok(())
    }

    /// Appends a scalar objective node for `unit` (batch of one) to a compiled graph.
    pub fn objective_node(&self, compiled: &mut Compiled, unit: &UnitRef) -> Result<NodeId, NetError> {
        self.validate_unit(unit)?;
        let node = compiled
            .layer_node(&unit.layer)
            .ok_or_else(|| NetError::UnknownLayer(unit.layer.clone()))?;
        let g = &mut compiled.graph;
        let rank = g.shape(node).len();
        let obj = match (rank, unit.position) {
            (4, UnitPosition::ChannelMean) => {
                let m = g.mean_reduce(node, 2)?;
                g.pick(m, &[0, unit.channel])?
            }
            (4, UnitPosition::At { y, x }) => g.pick(node, &[0, unit.channel, y, x])?,
            (2, _) => g.pick(node, &[0, unit.channel])?,
            _ => return Err(NetError::BadUnit(format!("layer `{}` has rank {rank}", unit.layer))),
        };
        Ok(obj)
    }

    /// Spatial/flat extent of one channel of a layer.
    pub fn channel_count(&self, layer: &str) -> Result<usize, NetError> {
        Ok(self.layer_shape(layer)?[0])
    }
}

pub(crate) fn argmax_rows(out: &Tensor) -> Vec<usize> {
    let k = out.shape()[1];
    out.data()
        .chunks(k)
        .map(|row| {
            if k == 1 {
                usize::from(row[0] >= 0.0)
            } else {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            }
        })
        .collect()
}

/// The desk-scale classifier: four conv/batch-norm/ReLU blocks and a dense head.
pub fn base_classifier(input_shape: [usize; 3], classes: usize, seed: u64) -> Result<LayerGraph, NetError> {
    let mut g = LayerGraph::new(input_shape);
    let widths = [8, 16, 16, 32];
    let strides = [1, 2, 2, 2];
    let mut prev = INPUT_LAYER.to_string();
    let mut channels = input_shape[0];
    for (i, (&width, &stride)) in widths.iter().zip(&strides).enumerate() {
        let (conv, bn, relu) = (format!("conv{}", i + 1), format!("bn{}", i + 1), format!("relu{}", i + 1));
        g.add_layer(
            &conv,
            LayerKind::Conv {
                in_channels: channels,
                out_channels: width,
                kernel: [3, 3],
                stride,
                padding: 1,
            },
            &[&prev],
        )?;
        g.add_layer(&bn, LayerKind::BatchNorm { channels: width, eps: 1e-5 }, &[&conv])?;
        g.add_layer(&relu, LayerKind::Relu, &[&bn])?;
        prev = relu;
        channels = width;
    }
    g.add_layer("flatten", LayerKind::Flatten, &[&prev])?;
    let flat = g.layer_shape("flatten")?[0];
    g.add_layer(
        "logits",
        LayerKind::Dense {
            in_features: flat,
            out_features: classes,
        },
        &["flatten"],
    )?;
    g.set_output("logits")?;
    g.init_params(seed);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_conv() -> LayerGraph {
        let mut g = LayerGraph::new([1, 2, 2]);
        g.add_layer(
            "conv",
            LayerKind::Conv {
                in_channels: 1,
                out_channels: 1,
                kernel: [2, 2],
                stride: 1,
                padding: 0,
            },
            &["input"],
        )
        .unwrap();
        g.set_output("conv").unwrap();
        g.set_param("conv.weight", Tensor::new(vec![1, 1, 2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        g
    }

    #[test]
    fn taps_on_single_conv() {
        let g = single_conv();
        let batch = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let taps = g.forward_with_taps(&batch, &["input", "conv"]).unwrap();
        assert_eq!(taps["input"], batch);
        assert_eq!(taps["conv"].data(), &[5.0]);
        assert!(g.forward_with_taps(&batch, &["nope"]).is_err());
    }

    #[test]
    fn tap_cardinality_on_two_layer_net() {
        let mut g = LayerGraph::new([1, 2, 2]);
        g.add_layer("flat", LayerKind::Flatten, &["input"]).unwrap();
        g.add_layer("dense", LayerKind::Dense { in_features: 4, out_features: 3 }, &["flat"]).unwrap();
        g.set_output("dense").unwrap();
        let batch = Tensor::zeros(&[2, 1, 2, 2]);
        let taps = g.forward_with_taps(&batch, &["flat", "dense"]).unwrap();
        assert_eq!(taps.len(), 2);
        let taps = g.forward_with_taps(&batch, &["input", "flat"]).unwrap();
        assert_eq!(taps.len(), 3);
    }

    #[test]
    fn argmax_tie_breaks_low() {
        let out = Tensor::new(vec![3, 2], vec![0.1, 0.9, 0.5, 0.5, -1.0, -2.0]).unwrap();
        assert_eq!(argmax_rows(&out), vec![1, 0, 0]);
    }

    #[test]
    fn wiring_errors() {
        let mut g = LayerGraph::new([1, 4, 4]);
        assert!(matches!(g.add_layer("r", LayerKind::Relu, &["missing"]), Err(NetError::UnknownLayer(_))));
        assert!(matches!(
            g.add_layer("d", LayerKind::Dense { in_features: 3, out_features: 1 }, &["input"]),
            Err(NetError::Wiring { .. })
        ));
        g.add_layer("r", LayerKind::Relu, &["input"]).unwrap();
        assert!(matches!(g.add_layer("r", LayerKind::Relu, &["input"]), Err(NetError::DuplicateLayer(_))));
    }

    #[test]
    fn base_classifier_shapes() {
        let g = base_classifier([1, 32, 32], 10, 1).unwrap();
        assert_eq!(g.layer_shape("relu1").unwrap(), &[8, 32, 32]);
        assert_eq!(g.layer_shape("relu4").unwrap(), &[32, 4, 4]);
        assert_eq!(g.output_len(), 10);
        assert!(g.trainable_params().contains(&"bn2.gamma".to_string()));
        assert!(!g.trainable_params().contains(&"bn2.running_mean".to_string()));
    }
}
