//! Define-then-run reverse-mode tape.
//!
//! A [`Graph`] is built once from named inputs, constants and operations,
//! then evaluated with [`Graph::forward`] any number of times as the inputs
//! change. [`Graph::backward`] propagates the adjoint of a scalar output back
//! to every node that depends on an input. Nodes are appended in creation
//! order, which is a topological order, so backward is a single reverse
//! sweep.

use std::collections::HashMap;

use super::linalg::lu_det_grad;
use super::tensor::{kernels, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Input(String),
    Constant,
    Affine { x: NodeId, w: NodeId, b: NodeId },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    ClampMin(NodeId, f64),
    Tanh(NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Recip(NodeId),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    MeanRows(NodeId),
    MaxRows(NodeId),
    L1(NodeId),
    SqL2(NodeId),
    L2(NodeId),
    Entropy(NodeId),
    Det(NodeId),
    Concat(Vec<NodeId>),
    Stack(Vec<NodeId>),
    Row(NodeId, usize),
    Slice(NodeId, usize, usize),
    NearestSqDist(NodeId, Tensor),
    BceWithLogits(NodeId, NodeId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input(_) => "input",
            Op::Constant => "constant",
            Op::Affine { .. } => "affine",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddRow(..) => "add_row",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::ClampMin(..) => "clamp_min",
            Op::Tanh(_) => "tanh",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Recip(_) => "recip",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanRows(_) => "mean_rows",
            Op::MaxRows(_) => "max_rows",
            Op::L1(_) => "l1",
            Op::SqL2(_) => "sq_l2",
            Op::L2(_) => "l2",
            Op::Entropy(_) => "entropy",
            Op::Det(_) => "det",
            Op::Concat(_) => "concat",
            Op::Stack(_) => "stack",
            Op::Row(..) => "row",
            Op::Slice(..) => "slice",
            Op::NearestSqDist(..) => "nearest_sq_dist",
            Op::BceWithLogits(..) => "bce_with_logits",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Input(_) | Op::Constant => vec![],
            Op::Affine { x, w, b } => vec![*x, *w, *b],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::ClampMin(a, _)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Recip(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::MaxRows(a)
            | Op::L1(a)
            | Op::SqL2(a)
            | Op::L2(a)
            | Op::Entropy(a)
            | Op::Det(a)
            | Op::Row(a, _)
            | Op::Slice(a, _, _)
            | Op::NearestSqDist(a, _) => vec![*a],
            Op::BceWithLogits(a, t) => vec![*a, *t],
            Op::Concat(v) | Op::Stack(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Option<Tensor>,
    /// Some input is an ancestor, so the node carries a gradient.
    needs_grad: bool,
}

/// Gradients from one backward sweep, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    names: HashMap<String, NodeId>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).and_then(|&id| self.get(id))
    }

    /// Gradient data for `id`, or zeros of length `len` if nothing flowed there.
    pub fn data_or_zeros(&self, id: NodeId, len: usize) -> Vec<f64> {
        self.get(id)
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; len])
    }

    /// Takes ownership of a gradient.
    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    inputs: HashMap<String, NodeId>,
    evaluated: bool,
    failed: Option<NodeId>,
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

    fn push(&mut self, op: Op) -> NodeId {
        let needs_grad = match &op {
            Op::Input(_) => true,
            Op::Constant => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].needs_grad),
        };
        self.evaluated = false;
        self.nodes.push(Node {
            op,
            value: None,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Declares a named input. Declaring the same name twice returns the
    /// existing node.
    pub fn input(&mut self, name: &str) -> NodeId {
        if let Some(&id) = self.inputs.get(name) {
            return id;
        }
        let id = self.push(Op::Input(name.to_string()));
        self.inputs.insert(name.to_string(), id);
        id
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        let id = self.push(Op::Constant);
        self.nodes[id.0].value = Some(value);
        id
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a value to a named input. Invalidates the previous forward pass.
    pub fn set_input(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = *self
            .inputs
            .get(name)
            .ok_or_else(|| Error::UnknownInput(name.to_string()))?;
        self.nodes[id.0].value = Some(value);
        self.evaluated = false;
        Ok(())
    }

    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Affine { x, w, b })
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::MatMul(a, b))
    }
    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Sub(a, b))
    }
    /// Elementwise product of equal-shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }
    /// Adds a row vector to every row of a matrix (or to a vector).
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        self.push(Op::AddRow(a, row))
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::AddScalar(a, c))
    }
    /// `max(a, c)` elementwise; no gradient flows where the clamp is active.
    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        self.push(Op::ClampMin(a, c))
    }
    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Tanh(a))
    }
    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Relu(a))
    }
    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sigmoid(a))
    }
    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Log(a))
    }
    pub fn recip(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Recip(a))
    }
    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Softmax(a))
    }
    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        self.push(Op::LogSoftmax(a))
    }
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Mean(a))
    }
    /// Column means of a matrix.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MeanRows(a))
    }
    /// Column maxima of a matrix; ties go to the lowest row.
    pub fn max_rows(&mut self, a: NodeId) -> NodeId {
        self.push(Op::MaxRows(a))
    }
    pub fn l1(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L1(a))
    }
    pub fn sq_l2(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SqL2(a))
    }
    pub fn l2(&mut self, a: NodeId) -> NodeId {
        self.push(Op::L2(a))
    }
    /// `-sum p log p` over all entries.
    pub fn entropy(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Entropy(a))
    }
    pub fn det(&mut self, a: NodeId) -> NodeId {
        self.push(Op::Det(a))
    }
    /// Flattens and concatenates into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        self.push(Op::Concat(parts.to_vec()))
    }
    /// Stacks equal-length vectors as matrix rows.
    pub fn stack(&mut self, rows: &[NodeId]) -> NodeId {
        self.push(Op::Stack(rows.to_vec()))
    }
    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        self.push(Op::Row(a, i))
    }
    /// `len` entries of the last axis starting at `start`.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        self.push(Op::Slice(a, start, len))
    }
    /// Per row of `a`, the squared distance to the nearest row of `set`.
    pub fn nearest_sq_dist(&mut self, a: NodeId, set: Tensor) -> NodeId {
        self.push(Op::NearestSqDist(a, set))
    }
    /// Summed binary cross-entropy of sigmoid(`logits`) against `target`.
    /// No gradient flows into the target.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: NodeId) -> NodeId {
        self.push(Op::BceWithLogits(logits, target))
    }

    /// Evaluates every node. Fails on unbound inputs, shape errors or
    /// non-finite results.
    pub fn forward(&mut self) -> Result<()> {
        self.failed = None;
        for idx in 0..self.nodes.len() {
            match &self.nodes[idx].op {
                Op::Input(name) => {
                    if self.nodes[idx].value.is_none() {
                        return Err(Error::UnboundInput(name.clone()));
                    }
                }
                Op::Constant => {}
                op => {
                    let value = self.eval(op).inspect_err(|_| self.failed = Some(NodeId(idx)))?;
                    if !value.is_finite() {
                        self.failed = Some(NodeId(idx));
                        return Err(Error::NonFinite {
                            what: op.name().to_string(),
                        });
                    }
                    self.nodes[idx].value = Some(value);
                }
            }
        }
        self.evaluated = true;
        Ok(())
    }

    /// Node at which the last forward pass stopped, if it failed.
    pub fn failed_node(&self) -> Option<NodeId> {
        self.failed
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        if !self.evaluated {
            if let Op::Input(_) | Op::Constant = self.nodes[id.0].op {
            } else {
                return Err(Error::BackwardBeforeForward);
            }
        }
        self.nodes[id.0]
            .value
            .as_ref()
            .ok_or(Error::BackwardBeforeForward)
    }

    fn val(&self, id: NodeId) -> &Tensor {
        self.nodes[id.0]
            .value
            .as_ref()
            .expect("parent evaluated before child")
    }

    fn eval(&self, op: &Op) -> Result<Tensor> {
        let name = op.name();
        Ok(match op {
            Op::Input(_) | Op::Constant => unreachable!(),
            Op::Affine { x, w, b } => {
                let (x, w, b) = (self.val(*x), self.val(*w), self.val(*b));
                let (rows, k, m) = affine_dims(name, x, w)?;
                if b.rank() != 1 || b.len() != m {
                    return Err(Error::shape(name, format!("bias {:?} vs output width {m}", b.shape())));
                }
                let out = kernels::affine(x.data(), rows, k, w.data(), m, Some(b.data()));
                reshape_like_rows(x, rows, m, out)
            }
            Op::MatMul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                let (rows, k, m) = affine_dims(name, a, b)?;
                let out = kernels::affine(a.data(), rows, k, b.data(), m, None);
                reshape_like_rows(a, rows, m, out)
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
                let (a, b) = (self.val(*a), self.val(*b));
                same_shape(name, a, b)?;
                let data = a
                    .data()
                    .iter()
                    .zip(b.data())
                    .map(|(x, y)| match op {
                        Op::Add(..) => x + y,
                        Op::Sub(..) => x - y,
                        _ => x * y,
                    })
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::AddRow(a, r) => {
                let (a, r) = (self.val(*a), self.val(*r));
                if r.rank() != 1 || a.rank() == 0 || a.cols() != r.len() {
                    return Err(Error::shape(name, format!("{:?} + row {:?}", a.shape(), r.shape())));
                }
                let c = r.len();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| v + r.data()[i % c])
                    .collect();
                Tensor::new(a.shape().to_vec(), data)?
            }
            Op::Scale(a, c) => map(self.val(*a), |v| v * c),
            Op::AddScalar(a, c) => map(self.val(*a), |v| v + c),
            Op::ClampMin(a, c) => map(self.val(*a), |v| v.max(*c)),
            Op::Tanh(a) => map(self.val(*a), f64::tanh),
            Op::Relu(a) => map(self.val(*a), kernels::relu),
            Op::Sigmoid(a) => map(self.val(*a), kernels::sigmoid),
            Op::Exp(a) => map(self.val(*a), f64::exp),
            Op::Log(a) => map(self.val(*a), f64::ln),
            Op::Recip(a) => map(self.val(*a), |v| 1.0 / v),
            Op::Softmax(a) | Op::LogSoftmax(a) => {
                let a = self.val(*a);
                if a.rank() == 0 {
                    return Err(Error::shape(name, "scalar input"));
                }
                let c = a.cols();
                let mut out = vec![0.0; a.len()];
                for (src, dst) in a.data().chunks(c).zip(out.chunks_mut(c)) {
                    if matches!(op, Op::Softmax(_)) {
                        kernels::softmax_row(src, dst);
                    } else {
                        kernels::log_softmax_row(src, dst);
                    }
                }
                Tensor::new(a.shape().to_vec(), out)?
            }
            Op::Sum(a) => Tensor::scalar(self.val(*a).data().iter().sum()),
            Op::Mean(a) => {
                let a = self.val(*a);
                if a.is_empty() {
                    return Err(Error::shape(name, "empty input"));
                }
                Tensor::scalar(a.data().iter().sum::<f64>() / a.len() as f64)
            }
            Op::MeanRows(a) | Op::MaxRows(a) => {
                let a = self.val(*a);
                if a.rank() != 2 || a.rows() == 0 {
                    return Err(Error::shape(name, format!("needs a non-empty matrix, got {:?}", a.shape())));
                }
                let (n, c) = (a.rows(), a.cols());
                let mut out = a.row(0).to_vec();
                for r in 1..n {
                    for (o, &v) in out.iter_mut().zip(a.row(r)) {
                        if matches!(op, Op::MeanRows(_)) {
                            *o += v;
                        } else if v > *o {
                            *o = v;
                        }
                    }
                }
                if matches!(op, Op::MeanRows(_)) {
                    for o in &mut out {
                        *o /= n as f64;
                    }
                }
                Tensor::new(vec![c], out)?
            }
            Op::L1(a) => Tensor::scalar(self.val(*a).data().iter().map(|v| v.abs()).sum()),
            Op::SqL2(a) => Tensor::scalar(self.val(*a).data().iter().map(|v| v * v).sum()),
            Op::L2(a) => Tensor::scalar(kernels::l2_norm(self.val(*a).data())),
            Op::Entropy(a) => Tensor::scalar(kernels::entropy(self.val(*a).data())),
            Op::Det(a) => {
                let a = self.val(*a);
                let n = square_dim(name, a)?;
                Tensor::scalar(super::linalg::lu_det(a.data(), n))
            }
            Op::Concat(parts) => {
                let mut data = Vec::new();
                for p in parts {
                    data.extend_from_slice(self.val(*p).data());
                }
                Tensor::vector(data)
            }
            Op::Stack(rows) => {
                let rows: Vec<&[f64]> = rows.iter().map(|r| self.val(*r).data()).collect();
                Tensor::from_rows(&rows).map_err(|_| Error::shape(name, "rows differ in length"))?
            }
            Op::Row(a, i) => {
                let a = self.val(*a);
                if a.rank() != 2 || *i >= a.rows() {
                    return Err(Error::shape(name, format!("row {i} of {:?}", a.shape())));
                }
                Tensor::vector(a.row(*i).to_vec())
            }
            Op::Slice(a, start, len) => {
                let a = self.val(*a);
                let c = a.cols();
                if a.rank() == 0 || start + len > c {
                    return Err(Error::shape(name, format!("[{start}..{}] of {:?}", start + len, a.shape())));
                }
                let data: Vec<f64> = a
                    .data()
                    .chunks(c)
                    .flat_map(|r| r[*start..start + len].iter().copied())
                    .collect();
                let mut shape = a.shape().to_vec();
                *shape.last_mut().unwrap() = *len;
                Tensor::new(shape, data)?
            }
            Op::NearestSqDist(a, set) => {
                let a = self.val(*a);
                if set.rows() == 0 || a.cols() != set.cols() || a.rank() == 0 {
                    return Err(Error::shape(name, format!("{:?} against set {:?}", a.shape(), set.shape())));
                }
                let c = a.cols();
                let out = a
                    .data()
                    .chunks(c)
                    .map(|r| nearest(r, set).1)
                    .collect();
                Tensor::vector(out)
            }
            Op::BceWithLogits(a, t) => {
                let (a, t) = (self.val(*a), self.val(*t));
                if a.shape() != t.shape() {
                    return Err(Error::shape(name, format!("{:?} vs target {:?}", a.shape(), t.shape())));
                }
                let s = a
                    .data()
                    .iter()
                    .zip(t.data())
                    .map(|(&l, &y)| l.max(0.0) - y * l + (-l.abs()).exp().ln_1p())
                    .sum();
                Tensor::scalar(s)
            }
        })
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        self.backward_with_seed(output, None)
    }

    /// Reverse sweep seeded with an explicit output adjoint (defaults to 1
    /// for scalar outputs).
    pub fn backward_with_seed(&self, output: NodeId, seed: Option<Tensor>) -> Result<Gradients> {
        if !self.evaluated {
            return Err(Error::BackwardBeforeForward);
        }
        let out_val = self.val(output);
        let seed = match seed {
            Some(s) => {
                same_shape("backward", out_val, &s)?;
                s
            }
            None => {
                if out_val.len() != 1 {
                    return Err(Error::shape(
                        "backward",
                        format!("output {:?} is not a scalar; pass a seed", out_val.shape()),
                    ));
                }
                Tensor::new(out_val.shape().to_vec(), vec![1.0])?
            }
        };
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(seed);
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Input(_) = node.op {
                grads[idx] = Some(g);
                continue;
            }
            self.vjp(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            names: self.inputs.clone(),
        })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, g: Vec<f64>) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(existing) => {
                for (e, v) in existing.data_mut().iter_mut().zip(g) {
                    *e += v;
                }
            }
            slot @ None => {
                let shape = self.val(id).shape().to_vec();
                *slot = Some(Tensor::new(shape, g).expect("gradient matches value shape"));
            }
        }
    }

    fn vjp(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let y = node.value.as_ref().expect("evaluated");
        let gd = g.data();
        let needs = |id: &NodeId| self.nodes[id.0].needs_grad;
        match &node.op {
            Op::Input(_) | Op::Constant => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.val(*x), self.val(*w));
                let (rows, k, m) = affine_dims("affine", xv, wv)?;
                if needs(x) {
                    self.accumulate(grads, *x, kernels::a_bt(gd, rows, m, wv.data(), k));
                }
                if needs(w) {
                    self.accumulate(grads, *w, kernels::at_b(xv.data(), rows, k, gd, m));
                }
                if needs(b) {
                    let mut gb = vec![0.0; m];
                    for r in gd.chunks(m) {
                        for (o, v) in gb.iter_mut().zip(r) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                let (rows, k, m) = affine_dims("matmul", av, bv)?;
                if needs(a) {
                    self.accumulate(grads, *a, kernels::a_bt(gd, rows, m, bv.data(), k));
                }
                if needs(b) {
                    self.accumulate(grads, *b, kernels::at_b(av.data(), rows, k, gd, m));
                }
            }
            Op::Add(a, b) => {
                if needs(a) {
                    self.accumulate(grads, *a, gd.to_vec());
                }
                if needs(b) {
                    self.accumulate(grads, *b, gd.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(a) {
                    self.accumulate(grads, *a, gd.to_vec());
                }
                if needs(b) {
                    self.accumulate(grads, *b, gd.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.val(*a), self.val(*b));
                if needs(a) {
                    self.accumulate(grads, *a, gd.iter().zip(bv.data()).map(|(g, y)| g * y).collect());
                }
                if needs(b) {
                    self.accumulate(grads, *b, gd.iter().zip(av.data()).map(|(g, x)| g * x).collect());
                }
            }
            Op::AddRow(a, r) => {
                if needs(a) {
                    self.accumulate(grads, *a, gd.to_vec());
                }
                if needs(r) {
                    let c = self.val(*r).len();
                    let mut gr = vec![0.0; c];
                    for row in gd.chunks(c) {
                        for (o, v) in gr.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    self.accumulate(grads, *r, gr);
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, gd.iter().map(|v| v * c).collect()),
            Op::AddScalar(a, _) => self.accumulate(grads, *a, gd.to_vec()),
            Op::ClampMin(a, c) => {
                let x = self.val(*a).data();
                let out = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v >= *c { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, out);
            }
            Op::Tanh(a) => {
                let out = gd.iter().zip(y.data()).map(|(g, t)| g * (1.0 - t * t)).collect();
                self.accumulate(grads, *a, out);
            }
            Op::Relu(a) => {
                let x = self.val(*a).data();
                let out = gd
                    .iter()
                    .zip(x)
                    .map(|(g, &v)| if v > 0.0 { *g } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, out);
            }
            Op::Sigmoid(a) => {
                let out = gd.iter().zip(y.data()).map(|(g, s)| g * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, out);
            }
            Op::Exp(a) => {
                let out = gd.iter().zip(y.data()).map(|(g, e)| g * e).collect();
                self.accumulate(grads, *a, out);
            }
            Op::Log(a) => {
                let x = self.val(*a).data();
                self.accumulate(grads, *a, gd.iter().zip(x).map(|(g, v)| g / v).collect());
            }
            Op::Recip(a) => {
                let out = gd.iter().zip(y.data()).map(|(g, r)| -g * r * r).collect();
                self.accumulate(grads, *a, out);
            }
            Op::Softmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((yr, gr), o) in y.data().chunks(c).zip(gd.chunks(c)).zip(out.chunks_mut(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for ((oj, &p), &gj) in o.iter_mut().zip(yr).zip(gr) {
                        *oj = p * (gj - dot);
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::LogSoftmax(a) => {
                let c = y.cols();
                let mut out = vec![0.0; y.len()];
                for ((yr, gr), o) in y.data().chunks(c).zip(gd.chunks(c)).zip(out.chunks_mut(c)) {
                    let total: f64 = gr.iter().sum();
                    for ((oj, &ly), &gj) in o.iter_mut().zip(yr).zip(gr) {
                        *oj = gj - ly.exp() * total;
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::Sum(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, vec![gd[0]; n]);
            }
            Op::Mean(a) => {
                let n = self.val(*a).len();
                self.accumulate(grads, *a, vec![gd[0] / n as f64; n]);
            }
            Op::MeanRows(a) => {
                let av = self.val(*a);
                let n = av.rows() as f64;
                let out = (0..av.len()).map(|i| gd[i % av.cols()] / n).collect();
                self.accumulate(grads, *a, out);
            }
            Op::MaxRows(a) => {
                let av = self.val(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for j in 0..c {
                    let mut best = 0;
                    for r in 1..av.rows() {
                        if av.data()[r * c + j] > av.data()[best * c + j] {
                            best = r;
                        }
                    }
                    out[best * c + j] = gd[j];
                }
                self.accumulate(grads, *a, out);
            }
            Op::L1(a) => {
                let x = self.val(*a).data();
                let out = x
                    .iter()
                    .map(|&v| {
                        if v > 0.0 {
                            gd[0]
                        } else if v < 0.0 {
                            -gd[0]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                self.accumulate(grads, *a, out);
            }
            Op::SqL2(a) => {
                let x = self.val(*a).data();
                self.accumulate(grads, *a, x.iter().map(|v| 2.0 * v * gd[0]).collect());
            }
            Op::L2(a) => {
                let x = self.val(*a).data();
                let norm = y.item();
                let out = if norm > 0.0 {
                    x.iter().map(|v| gd[0] * v / norm).collect()
                } else {
                    vec![0.0; x.len()]
                };
                self.accumulate(grads, *a, out);
            }
            Op::Entropy(a) => {
                let x = self.val(*a).data();
                let out = x
                    .iter()
                    .map(|&p| if p > 0.0 { -gd[0] * (p.ln() + 1.0) } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, out);
            }
            Op::Det(a) => {
                let av = self.val(*a);
                let n = square_dim("det", av)?;
                let (_, dg) = lu_det_grad(av.data(), n);
                self.accumulate(grads, *a, dg.into_iter().map(|v| v * gd[0]).collect());
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = self.val(*p).len();
                    if needs(p) {
                        self.accumulate(grads, *p, gd[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::Stack(rows) => {
                let c = y.cols();
                for (i, r) in rows.iter().enumerate() {
                    if needs(r) {
                        self.accumulate(grads, *r, gd[i * c..(i + 1) * c].to_vec());
                    }
                }
            }
            Op::Row(a, i) => {
                let av = self.val(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                out[i * c..(i + 1) * c].copy_from_slice(gd);
                self.accumulate(grads, *a, out);
            }
            Op::Slice(a, start, len) => {
                let av = self.val(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for (r, gr) in gd.chunks(*len).enumerate() {
                    out[r * c + start..r * c + start + len].copy_from_slice(gr);
                }
                self.accumulate(grads, *a, out);
            }
            Op::NearestSqDist(a, set) => {
                let av = self.val(*a);
                let c = av.cols();
                let mut out = vec![0.0; av.len()];
                for (r, row) in av.data().chunks(c).enumerate() {
                    let (j, _) = nearest(row, set);
                    let target = set.row(j);
                    for ((o, &v), &t) in out[r * c..(r + 1) * c].iter_mut().zip(row).zip(target) {
                        *o = 2.0 * gd[r] * (v - t);
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::BceWithLogits(a, t) => {
                let x = self.val(*a).data();
                let out = x
                    .iter()
                    .zip(self.val(*t).data())
                    .map(|(&l, &yv)| gd[0] * (kernels::sigmoid(l) - yv))
                    .collect();
                self.accumulate(grads, *a, out);
            }
        }
        Ok(())
    }
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(a.shape().to_vec(), a.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn affine_dims(op: &'static str, x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize)> {
    if w.rank() != 2 || x.rank() == 0 || x.cols() != w.shape()[0] {
        return Err(Error::shape(op, format!("{:?} x {:?}", x.shape(), w.shape())));
    }
    Ok((x.rows(), x.cols(), w.shape()[1]))
}

fn reshape_like_rows(x: &Tensor, rows: usize, m: usize, data: Vec<f64>) -> Tensor {
    let shape = if x.rank() == 1 { vec![m] } else { vec![rows, m] };
    Tensor::new(shape, data).expect("affine output shape")
}

fn square_dim(op: &'static str, a: &Tensor) -> Result<usize> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::shape(op, format!("needs a square matrix, got {:?}", a.shape())));
    }
    Ok(a.shape()[0])
}

/// Index and squared distance of the nearest row of `set`; ties go to the
/// lowest index.
pub(crate) fn nearest(row: &[f64], set: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for j in 0..set.rows() {
        let d = kernels::sq_l2_dist(row, set.row(j));
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}
