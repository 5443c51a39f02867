use std::collections::{BTreeMap, HashMap};

use super::kernels::{self, ConvGeometry};
use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations of an [`ExprGraph`].
#[derive(Debug, Clone)]
pub enum Op {
    Input { name: String },
    Constant(Tensor),
    /// `[m,k] x [k,n] -> [m,n]`
    MatMul { a: NodeId, b: NodeId },
    /// `[N,C,H,W] * [O,C,KH,KW] -> [N,O,OH,OW]`, zero padding, dilation 1, groups 1.
    Conv2d {
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Adds a `[C]` vector along axis 1.
    BiasAdd { input: NodeId, bias: NodeId },
    /// Inference-mode batch normalization along axis 1.
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        var: NodeId,
        eps: f64,
    },
    /// Mean over every axis from `keep` on.
    MeanReduce { input: NodeId, keep: usize },
    /// Max over every axis from `keep` on; the gradient goes to the first maximum.
    MaxReduce { input: NodeId, keep: usize },
    Sigmoid(NodeId),
    /// Heaviside step, `1` for `x >= 0`. Zero gradient everywhere.
    Step(NodeId),
    Reshape { input: NodeId, shape: Vec<usize> },
    /// Concatenation of rank-2 `[N, k_i]` operands along axis 1.
    Concat(Vec<NodeId>),
    /// Extracts the element at a flat offset as a `[1]` tensor.
    Pick { input: NodeId, offset: usize },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant(_) => "constant",
            Op::MatMul { .. } => "matmul",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::Add(..) => "add",
            Op::Scale(..) => "scale",
            Op::BiasAdd { .. } => "bias",
            Op::BatchNorm { .. } => "batchnorm",
            Op::MeanReduce { .. } => "mean",
            Op::MaxReduce { .. } => "max",
            Op::Sigmoid(_) => "sigmoid",
            Op::Step(_) => "step",
            Op::Reshape { .. } => "reshape",
            Op::Concat(_) => "concat",
            Op::Pick { .. } => "pick",
        }
    }

    fn operands(&self) -> Vec<NodeId> {
        match self {
            Op::Input { .. } | Op::Constant(_) => vec![],
            Op::MatMul { a, b } => vec![*a, *b],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::Relu(a) | Op::Scale(a, _) | Op::Sigmoid(a) | Op::Step(a) => vec![*a],
            Op::Add(a, b) => vec![*a, *b],
            Op::BiasAdd { input, bias } => vec![*input, *bias],
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                ..
            } => vec![*input, *gamma, *beta, *mean, *var],
            Op::MeanReduce { input, .. }
            | Op::MaxReduce { input, .. }
            | Op::Reshape { input, .. }
            | Op::Pick { input, .. } => vec![*input],
            Op::Concat(items) => items.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    label: String,
}

/// Values bound to the named inputs of a graph.
#[derive(Debug, Default, Clone)]
pub struct Bindings<'a> {
    map: HashMap<&'a str, &'a Tensor>,
}

impl<'a> Bindings<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &'a str, value: &'a Tensor) -> Self {
        self.map.insert(name, value);
        self
    }

    pub fn insert(&mut self, name: &'a str, value: &'a Tensor) {
        self.map.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&'a Tensor> {
        self.map.get(name).copied()
    }
}

/// Acyclic expression graph. Nodes are stored in topological order: an
/// operand always precedes its consumer, so cycles cannot be expressed.
/// Every builder method applies the primitive's shape rule immediately, so a
/// graph that builds also evaluates (given correctly shaped bindings).
#[derive(Debug, Clone, Default)]
pub struct ExprGraph {
    nodes: Vec<Node>,
    inputs: BTreeMap<String, NodeId>,
    outputs: BTreeMap<String, NodeId>,
}

/// Every node value from one forward pass.
#[derive(Debug, Clone)]
pub struct Evaluation {
    values: Vec<Tensor>,
}

impl Evaluation {
    pub fn value(&self, node: NodeId) -> &Tensor {
        &self.values[node.0]
    }

    pub fn into_value(mut self, node: NodeId) -> Tensor {
        self.values.swap_remove(node.0)
    }
}

fn mismatch(label: &str, detail: impl Into<String>) -> TensorError {
    TensorError::ShapeMismatch {
        node: label.to_string(),
        detail: detail.into(),
    }
}

impl ExprGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, node: NodeId) -> &[usize] {
        &self.nodes[node.0].shape
    }

    pub fn label(&self, node: NodeId) -> &str {
        &self.nodes[node.0].label
    }

    pub fn op(&self, node: NodeId) -> &Op {
        &self.nodes[node.0].op
    }

    pub fn input_id(&self, name: &str) -> Option<NodeId> {
        self.inputs.get(name).copied()
    }

    pub fn inputs(&self) -> impl Iterator<Item = (&str, NodeId)> {
        self.inputs.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn output_id(&self, name: &str) -> Option<NodeId> {
        self.outputs.get(name).copied()
    }

    pub fn set_output(&mut self, name: &str, node: NodeId) {
        self.check(node);
        self.outputs.insert(name.to_string(), node);
    }

    /// Renames a node; the label is what errors refer to.
    pub fn set_label(&mut self, node: NodeId, label: impl Into<String>) {
        self.nodes[node.0].label = label.into();
    }

    fn check(&self, node: NodeId) {
        assert!(node.0 < self.nodes.len(), "node {node:?} is not part of this graph");
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        let id = NodeId(self.nodes.len());
        let label = format!("{}#{}", op.kind(), id.0);
        self.nodes.push(Node { op, shape, label });
        id
    }

    fn next_label(&self, kind: &str) -> String {
        format!("{kind}#{}", self.nodes.len())
    }

    pub fn input(&mut self, name: &str, shape: &[usize]) -> Result<NodeId, TensorError> {
        if self.inputs.contains_key(name) {
            return Err(TensorError::DuplicateInput(name.to_string()));
        }
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::InvalidShape(shape.to_vec()));
        }
        let id = self.push(
            Op::Input {
                name: name.to_string(),
            },
            shape.to_vec(),
        );
        self.nodes[id.0].label = name.to_string();
        self.inputs.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let shape = value.shape().to_vec();
        self.push(Op::Constant(value), shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch(
                &self.next_label("matmul"),
                format!("cannot multiply {sa:?} by {sb:?}"),
            ));
        }
        Ok(self.push(Op::MatMul { a, b }, vec![sa[0], sb[1]]))
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernel: NodeId,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId, TensorError> {
        let (si, sk) = (self.shape(input).to_vec(), self.shape(kernel).to_vec());
        let label = self.next_label("conv2d");
        if si.len() != 4 || sk.len() != 4 {
            return Err(mismatch(&label, format!("conv2d needs rank-4 operands, got {si:?} and {sk:?}")));
        }
        if si[1] != sk[1] {
            return Err(mismatch(&label, format!("input channels {} vs kernel channels {}", si[1], sk[1])));
        }
        if stride == 0 {
            return Err(mismatch(&label, "stride must be at least 1"));
        }
        if si[2] + 2 * padding < sk[2] || si[3] + 2 * padding < sk[3] {
            return Err(mismatch(&label, format!("kernel {sk:?} larger than padded input {si:?}")));
        }
        let geom = geometry(&si, &sk, stride, padding);
        Ok(self.push(
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            },
            vec![si[0], sk[0], geom.out_h(), geom.out_w()],
        ))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Relu(a), shape)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Sigmoid(a), shape)
    }

    pub fn step(&mut self, a: NodeId) -> NodeId {
        let shape = self.shape(a).to_vec();
        self.push(Op::Step(a), shape)
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        if !factor.is_finite() {
            return Err(mismatch(&self.next_label("scale"), "non-finite scale factor"));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Scale(a, factor), shape))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(
                &self.next_label("add"),
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let shape = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), shape))
    }

    fn channel_vector_check(&self, label: &str, input: NodeId, vector: NodeId) -> Result<(), TensorError> {
        let si = self.shape(input);
        let sv = self.shape(vector);
        if si.len() < 2 || sv.len() != 1 || sv[0] != si[1] {
            return Err(mismatch(label, format!("per-channel vector {sv:?} does not fit {si:?}")));
        }
        Ok(())
    }

    pub fn bias_add(&mut self, input: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        self.channel_vector_check(&self.next_label("bias"), input, bias)?;
        let shape = self.shape(input).to_vec();
        Ok(self.push(Op::BiasAdd { input, bias }, shape))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        var: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let label = self.next_label("batchnorm");
        for v in [gamma, beta, mean, var] {
            self.channel_vector_check(&label, input, v)?;
        }
        if !(eps > 0.0) {
            return Err(mismatch(&label, "eps must be positive"));
        }
        let shape = self.shape(input).to_vec();
        Ok(self.push(
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                eps,
            },
            shape,
        ))
    }

    fn reduced_shape(&self, kind: &str, input: NodeId, keep: usize) -> Result<Vec<usize>, TensorError> {
        let s = self.shape(input);
        if keep >= s.len() {
            return Err(mismatch(&self.next_label(kind), format!("cannot keep {keep} axes of {s:?}")));
        }
        Ok(if keep == 0 { vec![1] } else { s[..keep].to_vec() })
    }

    pub fn mean_reduce(&mut self, input: NodeId, keep: usize) -> Result<NodeId, TensorError> {
        let shape = self.reduced_shape("mean", input, keep)?;
        Ok(self.push(Op::MeanReduce { input, keep }, shape))
    }

    pub fn max_reduce(&mut self, input: NodeId, keep: usize) -> Result<NodeId, TensorError> {
        let shape = self.reduced_shape("max", input, keep)?;
        Ok(self.push(Op::MaxReduce { input, keep }, shape))
    }

    pub fn reshape(&mut self, input: NodeId, shape: &[usize]) -> Result<NodeId, TensorError> {
        let from: usize = self.shape(input).iter().product();
        let to: usize = shape.iter().product();
        if from != to || shape.iter().any(|&d| d == 0) {
            return Err(mismatch(
                &self.next_label("reshape"),
                format!("cannot reshape {:?} to {shape:?}", self.shape(input)),
            ));
        }
        Ok(self.push(
            Op::Reshape {
                input,
                shape: shape.to_vec(),
            },
            shape.to_vec(),
        ))
    }

    pub fn concat(&mut self, items: &[NodeId]) -> Result<NodeId, TensorError> {
        let label = self.next_label("concat");
        let first = items.first().ok_or_else(|| mismatch(&label, "nothing to concatenate"))?;
        let rows = self.shape(*first)[0];
        let mut width = 0;
        for &it in items {
            let s = self.shape(it);
            if s.len() != 2 || s[0] != rows {
                return Err(mismatch(&label, format!("operand {s:?} is not [{rows}, k]")));
            }
            width += s[1];
        }
        Ok(self.push(Op::Concat(items.to_vec()), vec![rows, width]))
    }

    pub fn pick(&mut self, input: NodeId, index: &[usize]) -> Result<NodeId, TensorError> {
        let s = self.shape(input).to_vec();
        if index.len() != s.len() || index.iter().zip(&s).any(|(i, d)| i >= d) {
            return Err(mismatch(&self.next_label("pick"), format!("index {index:?} outside {s:?}")));
        }
        let offset = index.iter().zip(&s).fold(0, |acc, (i, d)| acc * d + i);
        Ok(self.push(Op::Pick { input, offset }, vec![1]))
    }

    /// Runs every node and keeps all intermediate values.
    pub fn evaluate(&self, bindings: &Bindings<'_>) -> Result<Evaluation, TensorError> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let value = self.eval_node(node, &values, bindings)?;
            if value.data().iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite {
                    node: node.label.clone(),
                });
            }
            values.push(value);
        }
        Ok(Evaluation { values })
    }

    /// Evaluates the graph and returns its named outputs.
    pub fn forward_eval(&self, bindings: &Bindings<'_>) -> Result<BTreeMap<String, Tensor>, TensorError> {
        let eval = self.evaluate(bindings)?;
        Ok(self
            .outputs
            .iter()
            .map(|(name, id)| (name.clone(), eval.value(*id).clone()))
            .collect())
    }

    fn eval_node(&self, node: &Node, values: &[Tensor], bindings: &Bindings<'_>) -> Result<Tensor, TensorError> {
        let v = |id: &NodeId| &values[id.0];
        let out = match &node.op {
            Op::Input { name } => {
                let bound = bindings.get(name).ok_or_else(|| TensorError::UnboundInput(name.clone()))?;
                if bound.shape() != node.shape.as_slice() {
                    return Err(TensorError::InputShape {
                        name: name.clone(),
                        expected: node.shape.clone(),
                        actual: bound.shape().to_vec(),
                    });
                }
                bound.clone()
            }
            Op::Constant(t) => t.clone(),
            Op::MatMul { a, b } => {
                let (sa, sb) = (v(a).shape(), v(b).shape());
                let data = kernels::matmul(v(a).data(), v(b).data(), sa[0], sa[1], sb[1]);
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let g = geometry(v(input).shape(), v(kernel).shape(), *stride, *padding);
                Tensor::from_parts(node.shape.clone(), kernels::conv2d(v(input).data(), v(kernel).data(), &g))
            }
            Op::Relu(a) => v(a).map(|x| if x > 0.0 { x } else { 0.0 }),
            Op::Sigmoid(a) => v(a).map(sigmoid),
            Op::Step(a) => v(a).map(|x| if x >= 0.0 { 1.0 } else { 0.0 }),
            Op::Scale(a, f) => v(a).map(|x| x * f),
            Op::Add(a, b) => {
                let data = v(a).data().iter().zip(v(b).data()).map(|(x, y)| x + y).collect();
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::BiasAdd { input, bias } => {
                let mut data = v(input).data().to_vec();
                let (channels, inner) = channel_layout(&node.shape);
                let b = v(bias).data();
                for (i, x) in data.iter_mut().enumerate() {
                    *x += b[(i / inner) % channels];
                }
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let (channels, inner) = channel_layout(&node.shape);
                let (g, bt, m, vr) = (v(gamma).data(), v(beta).data(), v(mean).data(), v(var).data());
                let data = v(input)
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let c = (i / inner) % channels;
                        g[c] * (x - m[c]) / (vr[c] + eps).sqrt() + bt[c]
                    })
                    .collect();
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::MeanReduce { input, keep } => {
                let groups = reduce_groups(v(input).shape(), *keep);
                let data = v(input)
                    .data()
                    .chunks(groups.1)
                    .map(|c| c.iter().sum::<f64>() / groups.1 as f64)
                    .collect();
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::MaxReduce { input, keep } => {
                let groups = reduce_groups(v(input).shape(), *keep);
                let data = v(input)
                    .data()
                    .chunks(groups.1)
                    .map(|c| c[first_argmax(c)])
                    .collect();
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::Reshape { input, .. } => Tensor::from_parts(node.shape.clone(), v(input).data().to_vec()),
            Op::Concat(items) => {
                let rows = node.shape[0];
                let mut data = Vec::with_capacity(rows * node.shape[1]);
                for r in 0..rows {
                    for it in items {
                        let w = v(it).shape()[1];
                        data.extend_from_slice(&v(it).data()[r * w..(r + 1) * w]);
                    }
                }
                Tensor::from_parts(node.shape.clone(), data)
            }
            Op::Pick { input, offset } => Tensor::from_parts(vec![1], vec![v(input).data()[*offset]]),
        };
        Ok(out)
    }

    /// Propagates `seed` (the gradient of some scalar with respect to `output`)
    /// back to each node in `wrt`.
    pub fn backward(
        &self,
        eval: &Evaluation,
        output: NodeId,
        seed: &Tensor,
        wrt: &[NodeId],
    ) -> Result<Vec<Tensor>, TensorError> {
        self.check(output);
        if seed.shape() != self.shape(output) {
            return Err(mismatch(
                self.label(output),
                format!("seed {:?} does not match output {:?}", seed.shape(), self.shape(output)),
            ));
        }
        let mut needs = vec![false; self.nodes.len()];
        for &w in wrt {
            self.check(w);
            needs[w.0] = true;
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.op.operands().iter().any(|o| needs[o.0]) {
                needs[i] = true;
            }
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if needs[output.0] {
            grads[output.0] = Some(seed.data().to_vec());
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let contributions = self.node_backward(node, eval, &g, &needs);
            for (operand, delta) in contributions {
                match &mut grads[operand.0] {
                    Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                    slot @ None => *slot = Some(delta),
                }
            }
            // Keep gradients of requested leaves alive after propagation.
            if wrt.iter().any(|w| w.0 == i) {
                grads[i] = Some(g);
            }
        }
        Ok(wrt
            .iter()
            .map(|w| {
                let data = grads[w.0].clone().unwrap_or_else(|| vec![0.0; self.shape(*w).iter().product()]);
                Tensor::from_parts(self.shape(*w).to_vec(), data)
            })
            .collect())
    }

    fn node_backward(
        &self,
        node: &Node,
        eval: &Evaluation,
        g: &[f64],
        needs: &[bool],
    ) -> Vec<(NodeId, Vec<f64>)> {
        let v = |id: &NodeId| eval.value(*id);
        let mut out = Vec::new();
        match &node.op {
            Op::Input { .. } | Op::Constant(_) | Op::Step(_) => {}
            Op::MatMul { a, b } => {
                let (sa, sb) = (v(a).shape(), v(b).shape());
                let (da, db) = kernels::matmul_backward(
                    v(a).data(),
                    v(b).data(),
                    g,
                    (sa[0], sa[1], sb[1]),
                    needs[a.0],
                    needs[b.0],
                );
                out.extend(da.map(|d| (*a, d)));
                out.extend(db.map(|d| (*b, d)));
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let geom = geometry(v(input).shape(), v(kernel).shape(), *stride, *padding);
                let (di, dk) = kernels::conv2d_backward(
                    v(input).data(),
                    v(kernel).data(),
                    g,
                    &geom,
                    needs[input.0],
                    needs[kernel.0],
                );
                out.extend(di.map(|d| (*input, d)));
                out.extend(dk.map(|d| (*kernel, d)));
            }
            Op::Relu(a) => {
                // The subgradient at exactly zero is taken as zero.
                let d = v(a).data().iter().zip(g).map(|(&x, &gv)| if x > 0.0 { gv } else { 0.0 }).collect();
                out.push((*a, d));
            }
            Op::Sigmoid(a) => {
                let d = v(a)
                    .data()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gv)| {
                        let s = sigmoid(x);
                        gv * s * (1.0 - s)
                    })
                    .collect();
                out.push((*a, d));
            }
            Op::Scale(a, f) => out.push((*a, g.iter().map(|x| x * f).collect())),
            Op::Add(a, b) => {
                if needs[a.0] {
                    out.push((*a, g.to_vec()));
                }
                if needs[b.0] {
                    out.push((*b, g.to_vec()));
                }
            }
            Op::BiasAdd { input, bias } => {
                if needs[input.0] {
                    out.push((*input, g.to_vec()));
                }
                if needs[bias.0] {
                    let (channels, inner) = channel_layout(&node.shape);
                    let mut db = vec![0.0; channels];
                    for (i, &gv) in g.iter().enumerate() {
                        db[(i / inner) % channels] += gv;
                    }
                    out.push((*bias, db));
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                var,
                eps,
            } => {
                let (channels, inner) = channel_layout(&node.shape);
                let x = v(input).data();
                let (gm, m, vr) = (v(gamma).data(), v(mean).data(), v(var).data());
                let inv: Vec<f64> = vr.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
                let ch = |i: usize| (i / inner) % channels;
                if needs[input.0] {
                    out.push((*input, g.iter().enumerate().map(|(i, gv)| gv * gm[ch(i)] * inv[ch(i)]).collect()));
                }
                let mut dgamma = vec![0.0; channels];
                let mut dbeta = vec![0.0; channels];
                let mut dmean = vec![0.0; channels];
                let mut dvar = vec![0.0; channels];
                for (i, &gv) in g.iter().enumerate() {
                    let c = ch(i);
                    let centred = x[i] - m[c];
                    dgamma[c] += gv * centred * inv[c];
                    dbeta[c] += gv;
                    dmean[c] -= gv * gm[c] * inv[c];
                    dvar[c] += gv * gm[c] * centred * -0.5 * inv[c].powi(3);
                }
                for (id, d) in [(gamma, dgamma), (beta, dbeta), (mean, dmean), (var, dvar)] {
                    if needs[id.0] {
                        out.push((*id, d));
                    }
                }
            }
            Op::MeanReduce { input, keep } => {
                let (_, size) = reduce_groups(v(input).shape(), *keep);
                let d = (0..v(input).len()).map(|i| g[i / size] / size as f64).collect();
                out.push((*input, d));
            }
            Op::MaxReduce { input, keep } => {
                let (_, size) = reduce_groups(v(input).shape(), *keep);
                let mut d = vec![0.0; v(input).len()];
                for (gi, chunk) in v(input).data().chunks(size).enumerate() {
                    d[gi * size + first_argmax(chunk)] = g[gi];
                }
                out.push((*input, d));
            }
            Op::Reshape { input, .. } => out.push((*input, g.to_vec())),
            Op::Concat(items) => {
                let rows = node.shape[0];
                let total = node.shape[1];
                let mut col = 0;
                for it in items {
                    let w = v(it).shape()[1];
                    if needs[it.0] {
                        let mut d = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            d.extend_from_slice(&g[r * total + col..r * total + col + w]);
                        }
                        out.push((*it, d));
                    }
                    col += w;
                }
            }
            Op::Pick { input, offset } => {
                let mut d = vec![0.0; v(input).len()];
                d[*offset] = g[0];
                out.push((*input, d));
            }
        }
        out.retain(|(id, _)| needs[id.0]);
        out
    }

    /// Gradient of a scalar output node with respect to one named input.
    pub fn reverse_grad(&self, bindings: &Bindings<'_>, output: NodeId, wrt: &str) -> Result<Tensor, TensorError> {
        self.check(output);
        if !self.shape(output).iter().all(|&d| d == 1) {
            return Err(TensorError::NotScalar {
                node: self.label(output).to_string(),
                shape: self.shape(output).to_vec(),
            });
        }
        let target = self.input_id(wrt).ok_or_else(|| TensorError::UnboundInput(wrt.to_string()))?;
        let eval = self.evaluate(bindings)?;
        let seed = Tensor::from_parts(self.shape(output).to_vec(), vec![1.0]);
        Ok(self.backward(&eval, output, &seed, &[target])?.remove(0))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn geometry(si: &[usize], sk: &[usize], stride: usize, padding: usize) -> ConvGeometry {
    ConvGeometry {
        batch: si[0],
        in_channels: si[1],
        height: si[2],
        width: si[3],
        out_channels: sk[0],
        kernel_h: sk[2],
        kernel_w: sk[3],
        stride,
        padding,
    }
}

/// (channel count, elements per channel slab) for axis-1 broadcasting.
fn channel_layout(shape: &[usize]) -> (usize, usize) {
    (shape[1], shape[2..].iter().product())
}

/// (number of groups, group size) when reducing all axes from `keep` on.
fn reduce_groups(shape: &[usize], keep: usize) -> (usize, usize) {
    (shape[..keep].iter().product(), shape[keep..].iter().product())
}

fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in values.iter().enumerate() {
        if x > values[best] {
            best = i;
        }
    }
    best
}
