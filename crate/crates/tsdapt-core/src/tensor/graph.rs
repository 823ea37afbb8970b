//! Tape-style computation graph.
//!
//! Nodes are appended eagerly: constructing an op computes its value
//! immediately and records the parents, so node ids are already in
//! topological order and [`Graph::backward`] is a single reverse sweep
//! that touches each node exactly once. Graphs are built fresh for
//! every training step; parameters enter as gradient-requiring leaves.

use super::kernels::{self, Padding};
use super::{Array, TensorError};

/// Index of a node within its [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddN(Vec<NodeId>),
    Sum(NodeId),
    Ln(NodeId),
    Relu(NodeId),
    Conv1d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        padding: Padding,
    },
    Dense {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    },
    GlobalAvgPool(NodeId),
    Softmax(NodeId),
    CrossEntropy {
        probs: NodeId,
        label: usize,
    },
    Cosine(NodeId, NodeId),
    GradReverse {
        input: NodeId,
        lambda: f64,
    },
    LogSumExp(Vec<NodeId>),
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass, indexed by [`NodeId`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// The gradient accumulated at `id`, if the node required one.
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Array> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// An append-only reverse-mode differentiation graph.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// A gradient-requiring leaf (parameter).
    pub fn parameter(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf (inputs, fixed coefficients).
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(TensorError::ShapeMismatch {
                op,
                expected: format!("{:?}", self.value(a).shape()),
                actual: format!("{:?}", self.value(b).shape()),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        value.check_finite("add")?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        value.check_finite("sub")?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        value.check_finite("mul")?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId, TensorError> {
        let data = self.value(a).data().iter().map(|x| x * factor).collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        value.check_finite("scale")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Scale(a, factor), rg))
    }

    /// Elementwise sum of any number of same-shape nodes.
    pub fn add_n(&mut self, ids: &[NodeId]) -> Result<NodeId, TensorError> {
        let first = *ids.first().ok_or(TensorError::Empty { op: "add_n" })?;
        let mut data = self.value(first).data().to_vec();
        for &id in &ids[1..] {
            self.same_shape("add_n", first, id)?;
            for (d, x) in data.iter_mut().zip(self.value(id).data()) {
                *d += x;
            }
        }
        let value = Array::new(self.value(first).shape().to_vec(), data)?;
        value.check_finite("add_n")?;
        let rg = self.any_requires(ids);
        Ok(self.push(value, Op::AddN(ids.to_vec()), rg))
    }

    /// Arithmetic mean of any number of same-shape nodes.
    pub fn mean_n(&mut self, ids: &[NodeId]) -> Result<NodeId, TensorError> {
        let sum = self.add_n(ids)?;
        self.scale(sum, 1.0 / ids.len() as f64)
    }

    /// Sum of all elements, yielding a scalar node.
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let total: f64 = self.value(a).data().iter().sum();
        let value = Array::scalar(total);
        value.check_finite("sum")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Sum(a), rg))
    }

    /// Elementwise `ln(max(x, eps))`.
    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| x.max(kernels::LOG_EPS).ln())
            .collect();
        let value = Array::new(self.value(a).shape().to_vec(), data)?;
        value.check_finite("ln")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Ln(a), rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = kernels::relu(self.value(a));
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, Op::Relu(a), rg)
    }

    pub fn conv1d(
        &mut self,
        input: NodeId,
        kernels_id: NodeId,
        bias: NodeId,
        padding: Padding,
    ) -> Result<NodeId, TensorError> {
        let value = kernels::conv1d(self.value(input), self.value(kernels_id), self.value(bias), padding)?;
        value.check_finite("conv1d")?;
        let rg = self.any_requires(&[input, kernels_id, bias]);
        Ok(self.push(
            value,
            Op::Conv1d {
                input,
                kernels: kernels_id,
                bias,
                padding,
            },
            rg,
        ))
    }

    pub fn dense(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, TensorError> {
        let value = kernels::dense(self.value(input), self.value(weights), self.value(bias))?;
        value.check_finite("dense")?;
        let rg = self.any_requires(&[input, weights, bias]);
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weights,
                bias,
            },
            rg,
        ))
    }

    pub fn global_average_pool(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::global_average_pool(self.value(a))?;
        value.check_finite("global_average_pool")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::GlobalAvgPool(a), rg))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let value = kernels::softmax(self.value(a))?;
        value.check_finite("softmax")?;
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId, TensorError> {
        let v = kernels::cross_entropy(self.value(probs), label)?;
        let value = Array::scalar(v);
        value.check_finite("cross_entropy")?;
        let rg = self.nodes[probs.0].requires_grad;
        Ok(self.push(value, Op::CrossEntropy { probs, label }, rg))
    }

    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let v = kernels::cosine_similarity(self.value(a), self.value(b))?;
        let value = Array::scalar(v);
        value.check_finite("cosine_similarity")?;
        let rg = self.any_requires(&[a, b]);
        Ok(self.push(value, Op::Cosine(a, b), rg))
    }

    /// Identity forward; multiplies the upstream gradient by `-lambda`.
    pub fn gradient_reversal(&mut self, input: NodeId, lambda: f64) -> NodeId {
        let value = self.value(input).clone();
        let rg = self.nodes[input.0].requires_grad;
        self.push(value, Op::GradReverse { input, lambda }, rg)
    }

    /// `ln(sum exp)` over scalar nodes, max-stabilized.
    pub fn log_sum_exp(&mut self, ids: &[NodeId]) -> Result<NodeId, TensorError> {
        if ids.is_empty() {
            return Err(TensorError::Empty { op: "log_sum_exp" });
        }
        let mut vals = Vec::with_capacity(ids.len());
        for &id in ids {
            vals.push(self.value(id).as_scalar()?);
        }
        let value = Array::scalar(kernels::log_sum_exp(&vals));
        value.check_finite("log_sum_exp")?;
        let rg = self.any_requires(ids);
        Ok(self.push(value, Op::LogSumExp(ids.to_vec()), rg))
    }

    /// Reverse sweep from a scalar `output`, visiting each node once.
    ///
    /// Returns the gradient of `output` with respect to every node that
    /// requires one; repeated calls on the same graph are independent
    /// and yield identical results.
    pub fn backward(&self, output: NodeId) -> Result<Gradients, TensorError> {
        let out_node = &self.nodes[output.0];
        if !out_node.value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: out_node.value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Array>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        if !out_node.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[output.0] = Some(Array::scalar(1.0));

        for id in (0..=output.0).rev() {
            if grads[id].is_none() || matches!(self.nodes[id].op, Op::Leaf) {
                continue;
            }
            self.check_acyclic(id)?;
            let (parents, current) = grads.split_at_mut(id);
            let upstream = current[0].as_ref().expect("checked above");
            self.propagate(id, upstream, parents);
        }

        for (id, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.check_finite("backward").is_err() {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                debug_assert_eq!(g.shape(), self.nodes[id].value.shape());
            }
        }
        Ok(Gradients { grads })
    }

    fn check_acyclic(&self, id: usize) -> Result<(), TensorError> {
        let ok = match &self.nodes[id].op {
            Op::Leaf => true,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Cosine(a, b) => a.0 < id && b.0 < id,
            Op::Scale(a, _)
            | Op::Sum(a)
            | Op::Ln(a)
            | Op::Relu(a)
            | Op::GlobalAvgPool(a)
            | Op::Softmax(a)
            | Op::GradReverse { input: a, .. }
            | Op::CrossEntropy { probs: a, .. } => a.0 < id,
            Op::AddN(ids) | Op::LogSumExp(ids) => ids.iter().all(|p| p.0 < id),
            Op::Conv1d {
                input,
                kernels,
                bias,
                ..
            } => input.0 < id && kernels.0 < id && bias.0 < id,
            Op::Dense {
                input,
                weights,
                bias,
            } => input.0 < id && weights.0 < id && bias.0 < id,
        };
        if ok {
            Ok(())
        } else {
            Err(TensorError::CycleDetected { node: id })
        }
    }

    /// Adds this node's contribution to each gradient-requiring parent.
    fn propagate(&self, id: usize, upstream: &Array, parents: &mut [Option<Array>]) {
        let slot = |pid: NodeId, parents: &mut [Option<Array>]| -> bool {
            if !self.nodes[pid.0].requires_grad {
                return false;
            }
            if parents[pid.0].is_none() {
                parents[pid.0] = Some(Array::zeros(self.nodes[pid.0].value.shape()));
            }
            true
        };
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for &p in [a, b].iter() {
                    if slot(*p, parents) {
                        let buf = parents[p.0].as_mut().unwrap().data_mut();
                        for (d, g) in buf.iter_mut().zip(upstream.data()) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                if slot(*a, parents) {
                    let buf = parents[a.0].as_mut().unwrap().data_mut();
                    for (d, g) in buf.iter_mut().zip(upstream.data()) {
                        *d += g;
                    }
                }
                if slot(*b, parents) {
                    let buf = parents[b.0].as_mut().unwrap().data_mut();
                    for (d, g) in buf.iter_mut().zip(upstream.data()) {
                        *d -= g;
                    }
                }
            }
            Op::Mul(a, b) => {
                if slot(*a, parents) {
                    let other = self.nodes[b.0].value.data().to_vec();
                    let buf = parents[a.0].as_mut().unwrap().data_mut();
                    for ((d, g), o) in buf.iter_mut().zip(upstream.data()).zip(&other) {
                        *d += g * o;
                    }
                }
                if slot(*b, parents) {
                    let other = self.nodes[a.0].value.data().to_vec();
                    let buf = parents[b.0].as_mut().unwrap().data_mut();
                    for ((d, g), o) in buf.iter_mut().zip(upstream.data()).zip(&other) {
                        *d += g * o;
                    }
                }
            }
            Op::Scale(a, c) => {
                if slot(*a, parents) {
                    let buf = parents[a.0].as_mut().unwrap().data_mut();
                    for (d, g) in buf.iter_mut().zip(upstream.data()) {
                        *d += g * c;
                    }
                }
            }
            Op::AddN(ids) => {
                for &p in ids {
                    if slot(p, parents) {
                        let buf = parents[p.0].as_mut().unwrap().data_mut();
                        for (d, g) in buf.iter_mut().zip(upstream.data()) {
                            *d += g;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if slot(*a, parents) {
                    let g = upstream.data()[0];
                    for d in parents[a.0].as_mut().unwrap().data_mut() {
                        *d += g;
                    }
                }
            }
            Op::Ln(a) => {
                if slot(*a, parents) {
                    let xs = self.nodes[a.0].value.data().to_vec();
                    let buf = parents[a.0].as_mut().unwrap().data_mut();
                    for ((d, g), x) in buf.iter_mut().zip(upstream.data()).zip(&xs) {
                        if *x > kernels::LOG_EPS {
                            *d += g / x;
                        }
                    }
                }
            }
            Op::Relu(a) => {
                if slot(*a, parents) {
                    let input = &self.nodes[a.0].value;
                    kernels::relu_backward(upstream, input, parents[a.0].as_mut().unwrap().data_mut());
                }
            }
            Op::Conv1d {
                input,
                kernels: k,
                bias,
                padding,
            } => {
                let want_in = slot(*input, parents);
                let want_k = slot(*k, parents);
                let want_b = slot(*bias, parents);
                if want_in || want_k || want_b {
                    // split_at_mut can't hand out three slots at once; take them out instead
                    let mut d_in = if want_in { parents[input.0].take() } else { None };
                    let mut d_k = if want_k { parents[k.0].take() } else { None };
                    let mut d_b = if want_b { parents[bias.0].take() } else { None };
                    kernels::conv1d_backward(
                        upstream,
                        &self.nodes[input.0].value,
                        &self.nodes[k.0].value,
                        *padding,
                        d_in.as_mut().map(|a| a.data_mut()),
                        d_k.as_mut().map(|a| a.data_mut()),
                        d_b.as_mut().map(|a| a.data_mut()),
                    );
                    if let Some(a) = d_in {
                        parents[input.0] = Some(a);
                    }
                    if let Some(a) = d_k {
                        parents[k.0] = Some(a);
                    }
                    if let Some(a) = d_b {
                        parents[bias.0] = Some(a);
                    }
                }
            }
            Op::Dense {
                input,
                weights,
                bias,
            } => {
                let want_in = slot(*input, parents);
                let want_w = slot(*weights, parents);
                let want_b = slot(*bias, parents);
                if want_in || want_w || want_b {
                    let mut d_in = if want_in { parents[input.0].take() } else { None };
                    let mut d_w = if want_w { parents[weights.0].take() } else { None };
                    let mut d_b = if want_b { parents[bias.0].take() } else { None };
                    kernels::dense_backward(
                        upstream,
                        &self.nodes[input.0].value,
                        &self.nodes[weights.0].value,
                        d_in.as_mut().map(|a| a.data_mut()),
                        d_w.as_mut().map(|a| a.data_mut()),
                        d_b.as_mut().map(|a| a.data_mut()),
                    );
                    if let Some(a) = d_in {
                        parents[input.0] = Some(a);
                    }
                    if let Some(a) = d_w {
                        parents[weights.0] = Some(a);
                    }
                    if let Some(a) = d_b {
                        parents[bias.0] = Some(a);
                    }
                }
            }
            Op::GlobalAvgPool(a) => {
                if slot(*a, parents) {
                    let len = self.nodes[a.0].value.shape()[1];
                    kernels::global_average_pool_backward(
                        upstream,
                        len,
                        parents[a.0].as_mut().unwrap().data_mut(),
                    );
                }
            }
            Op::Softmax(a) => {
                if slot(*a, parents) {
                    let output = &self.nodes[id].value;
                    kernels::softmax_backward(upstream, output, parents[a.0].as_mut().unwrap().data_mut());
                }
            }
            Op::CrossEntropy { probs, label } => {
                if slot(*probs, parents) {
                    let g = upstream.data()[0];
                    kernels::cross_entropy_backward(
                        g,
                        &self.nodes[probs.0].value,
                        *label,
                        parents[probs.0].as_mut().unwrap().data_mut(),
                    );
                }
            }
            Op::Cosine(a, b) => {
                let g = upstream.data()[0];
                let value = self.nodes[id].value.data()[0];
                let want_a = slot(*a, parents);
                let want_b = slot(*b, parents);
                if want_a || want_b {
                    let mut d_a = if want_a { parents[a.0].take() } else { None };
                    let mut d_b = if want_b { parents[b.0].take() } else { None };
                    kernels::cosine_backward(
                        g,
                        &self.nodes[a.0].value,
                        &self.nodes[b.0].value,
                        value,
                        d_a.as_mut().map(|x| x.data_mut()),
                        d_b.as_mut().map(|x| x.data_mut()),
                    );
                    if let Some(x) = d_a {
                        parents[a.0] = Some(x);
                    }
                    if let Some(x) = d_b {
                        parents[b.0] = Some(x);
                    }
                }
            }
            Op::GradReverse { input, lambda } => {
                if slot(*input, parents) {
                    let buf = parents[input.0].as_mut().unwrap().data_mut();
                    for (d, g) in buf.iter_mut().zip(upstream.data()) {
                        *d += -lambda * g;
                    }
                }
            }
            Op::LogSumExp(ids) => {
                // d/dx_k = softmax(x)_k
                let g = upstream.data()[0];
                let vals: Vec<f64> = ids.iter().map(|p| self.nodes[p.0].value.data()[0]).collect();
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = vals.iter().map(|v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (&p, e) in ids.iter().zip(&exps) {
                    if slot(p, parents) {
                        parents[p.0].as_mut().unwrap().data_mut()[0] += g * e / total;
                    }
                }
            }
        }
    }
}
