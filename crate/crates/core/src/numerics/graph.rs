//! Define-by-run reverse-mode differentiation over matrices.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s. Calling
//! [`Graph::backward`] on a scalar walks the record in reverse and returns
//! the adjoint of every node that depends on a trainable leaf. A fresh graph
//! is built for every evaluation, so there is no retained state between
//! steps.

use std::cell::RefCell;
use std::rc::Rc;

use super::scalar::{sigmoid, soft_clip};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Expm1(usize),
    SoftClip { input: usize, lower: f64, upper: f64 },
    Concat(Vec<usize>),
    Slice { input: usize, start: usize },
    Gather { table: usize, indices: Vec<usize> },
    Sum(usize),
    LogSoftmaxPick { logits: usize, labels: Vec<usize>, probs: Tensor },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulBt(..) => "matmul_bt",
            Op::AddRow(..) => "add_row",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Exp(..) => "exp",
            Op::Expm1(..) => "expm1",
            Op::SoftClip { .. } => "soft_clip",
            Op::Concat(..) => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Sum(..) => "sum",
            Op::LogSoftmaxPick { .. } => "log_softmax_pick",
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

/// Adjoints produced by [`Graph::backward`], indexed by node.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the loss does not depend on `var` through a trainable path.
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn parameter(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    fn derived(&self, value: Tensor, op: Op, parents: &[usize]) -> Var<'_> {
        let requires_grad = parents.iter().any(|&p| self.requires_grad(p));
        self.push(value, op, requires_grad)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        assert!(std::ptr::eq(self, loss.graph), "loss belongs to another graph");
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        if !root.value.is_finite() {
            return Err(Error::NonFinite("loss value".into()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(Tensor::full(root.value.shape(), 1.0));

        for id in (0..=loss.id).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                grads[id] = Some(upstream);
                continue;
            }
            let mut send = |parent: usize, g: Tensor| -> Result<()> {
                if !nodes[parent].requires_grad {
                    return Ok(());
                }
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("backward of {} (node {id})", node.op.name())));
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
                Ok(())
            };
            let out = &node.value;
            match &node.op {
                Op::Leaf => unreachable!("leaves are handled above"),
                Op::MatMul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        send(*a, matmul_bt(&upstream, bv, av.shape()))?;
                    }
                    if nodes[*b].requires_grad {
                        send(*b, matmul_at(av, &upstream, bv.shape()))?;
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        send(*a, matmul(&upstream, bv, av.shape()))?;
                    }
                    if nodes[*b].requires_grad {
                        send(*b, matmul_at(&upstream, av, bv.shape()))?;
                    }
                }
                Op::AddRow(a, bias) => {
                    if nodes[*bias].requires_grad {
                        let cols = upstream.cols();
                        let mut g = vec![0.0; cols];
                        for r in 0..upstream.rows() {
                            for (acc, v) in g.iter_mut().zip(upstream.row(r)) {
                                *acc += v;
                            }
                        }
                        let shape = nodes[*bias].value.shape().to_vec();
                        send(*bias, Tensor::new(shape, g)?)?;
                    }
                    send(*a, upstream)?;
                }
                Op::Add(a, b) => {
                    send(*a, upstream.clone())?;
                    send(*b, upstream)?;
                }
                Op::Sub(a, b) => {
                    send(*b, upstream.map(|v| -v))?;
                    send(*a, upstream)?;
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].requires_grad {
                        send(*a, zip(&upstream, bv, |g, y| g * y))?;
                    }
                    if nodes[*b].requires_grad {
                        send(*b, zip(&upstream, av, |g, x| g * x))?;
                    }
                }
                Op::Scale(a, c) => send(*a, upstream.map(|v| v * c))?,
                Op::AddScalar(a) => send(*a, upstream)?,
                Op::Relu(a) => {
                    let g = zip(&upstream, &nodes[*a].value, |g, x| if x > 0.0 { g } else { 0.0 });
                    send(*a, g)?;
                }
                Op::Tanh(a) => send(*a, zip(&upstream, out, |g, y| g * (1.0 - y * y)))?,
                Op::Sigmoid(a) => send(*a, zip(&upstream, out, |g, y| g * y * (1.0 - y)))?,
                Op::Exp(a) => send(*a, zip(&upstream, out, |g, y| g * y))?,
                Op::Expm1(a) => send(*a, zip(&upstream, out, |g, y| g * (y + 1.0)))?,
                Op::SoftClip { input, lower, upper } => {
                    let (lo, hi) = (*lower, *upper);
                    let g = zip(&upstream, &nodes[*input].value, |g, x| g * (1.0 - sigmoid(x - hi) - sigmoid(lo - x)));
                    send(*input, g)?;
                }
                Op::Concat(parts) => {
                    let rows = upstream.rows();
                    let total = upstream.cols();
                    let mut offset = 0;
                    for &p in parts {
                        let pv = &nodes[p].value;
                        let w = pv.cols();
                        if nodes[p].requires_grad {
                            let mut g = Vec::with_capacity(rows * w);
                            for r in 0..rows {
                                g.extend_from_slice(&upstream.data()[r * total + offset..r * total + offset + w]);
                            }
                            send(p, Tensor::new(pv.shape().to_vec(), g)?)?;
                        }
                        offset += w;
                    }
                }
                Op::Slice { input, start } => {
                    let iv = &nodes[*input].value;
                    let (rows, cols) = (iv.rows(), iv.cols());
                    let w = upstream.cols();
                    let mut g = vec![0.0; rows * cols];
                    for r in 0..rows {
                        g[r * cols + start..r * cols + start + w].copy_from_slice(upstream.row(r));
                    }
                    send(*input, Tensor::new(iv.shape().to_vec(), g)?)?;
                }
                Op::Gather { table, indices } => {
                    let tv = &nodes[*table].value;
                    let d = tv.cols();
                    let mut g = vec![0.0; tv.len()];
                    for (r, &idx) in indices.iter().enumerate() {
                        for (acc, v) in g[idx * d..(idx + 1) * d].iter_mut().zip(upstream.row(r)) {
                            *acc += v;
                        }
                    }
                    send(*table, Tensor::new(tv.shape().to_vec(), g)?)?;
                }
                Op::Sum(a) => {
                    let av = &nodes[*a].value;
                    send(*a, Tensor::full(av.shape(), upstream.item()))?;
                }
                Op::LogSoftmaxPick { logits, labels, probs } => {
                    let n = probs.cols();
                    let mut g = probs.data().to_vec();
                    for (r, &label) in labels.iter().enumerate() {
                        let up = upstream.data()[r];
                        let row = &mut g[r * n..(r + 1) * n];
                        for v in row.iter_mut() {
                            *v *= -up;
                        }
                        row[label] += up;
                    }
                    send(*logits, Tensor::new(probs.shape().to_vec(), g)?)?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.graph.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn same_graph(&self, other: &Var<'_>) {
        assert!(std::ptr::eq(self.graph, other.graph), "operands belong to different graphs");
    }

    fn unary(self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g> {
        let v = self.value().map(f);
        self.graph.derived(v, op, &[self.id])
    }

    /// Same value, cut off from every upstream gradient path.
    pub fn stop_gradient(self) -> Var<'g> {
        let v = (*self.value()).clone();
        self.graph.constant(v)
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.cols() != b.rows() || b.shape().len() != 2 {
            return Err(Error::shape(
                "matmul",
                format!("[_, {}] x [{}, _]", a.cols(), a.cols()),
                format!("{:?} x {:?}", a.shape(), b.shape()),
            ));
        }
        let out = matmul(&a, &b, &[a.rows(), b.cols()]);
        Ok(self.graph.derived(out, Op::MatMul(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// `self × rhsᵀ`.
    pub fn matmul_bt(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.cols() != b.cols() {
            return Err(Error::shape(
                "matmul_bt",
                format!("[_, {}] x [_, {}]ᵀ", a.cols(), a.cols()),
                format!("{:?} x {:?}ᵀ", a.shape(), b.shape()),
            ));
        }
        let out = matmul_bt(&a, &b, &[a.rows(), b.rows()]);
        Ok(self.graph.derived(out, Op::MatMulBt(self.id, rhs.id), &[self.id, rhs.id]))
    }

    /// Adds a bias row to every row of `self`.
    pub fn add_row(self, bias: Var<'g>) -> Result<Var<'g>> {
        self.same_graph(&bias);
        let (a, b) = (self.value(), bias.value());
        if b.rows() != 1 || b.cols() != a.cols() {
            return Err(Error::shape("add_row", format!("bias of length {}", a.cols()), format!("{:?}", b.shape())));
        }
        let cols = a.cols();
        let mut out = (*a).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % cols];
        }
        Ok(self.graph.derived(out, Op::AddRow(self.id, bias.id), &[self.id, bias.id]))
    }

    fn elementwise(self, rhs: Var<'g>, name: &str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var<'g>> {
        self.same_graph(&rhs);
        let (a, b) = (self.value(), rhs.value());
        if a.shape() != b.shape() {
            return Err(Error::shape(name, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
        }
        let out = zip(&a, &b, f);
        Ok(self.graph.derived(out, op, &[self.id, rhs.id]))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(rhs, "add", Op::Add(self.id, rhs.id), |x, y| x + y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(rhs, "sub", Op::Sub(self.id, rhs.id), |x, y| x - y)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.elementwise(rhs, "mul", Op::Mul(self.id, rhs.id), |x, y| x * y)
    }

    pub fn scale(self, c: f64) -> Var<'g> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(self, c: f64) -> Var<'g> {
        self.unary(Op::AddScalar(self.id), |x| x + c)
    }

    pub fn relu(self) -> Var<'g> {
        self.unary(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn tanh(self) -> Var<'g> {
        self.unary(Op::Tanh(self.id), f64::tanh)
    }

    pub fn sigmoid(self) -> Var<'g> {
        self.unary(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn exp(self) -> Var<'g> {
        self.unary(Op::Exp(self.id), f64::exp)
    }

    pub fn expm1(self) -> Var<'g> {
        self.unary(Op::Expm1(self.id), f64::exp_m1)
    }

    /// Element-wise soft clipping into the open interval `(lower, upper)`.
    pub fn soft_clip(self, lower: f64, upper: f64) -> Var<'g> {
        let op = Op::SoftClip { input: self.id, lower, upper };
        self.unary(op, |x| soft_clip(x, lower, upper))
    }

    /// Column-wise concatenation; every part must have the same row count.
    pub fn concat(parts: &[Var<'g>]) -> Result<Var<'g>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let values: Vec<Rc<Tensor>> = parts
            .iter()
            .map(|p| {
                first.same_graph(p);
                p.value()
            })
            .collect();
        let rows = values[0].rows();
        if let Some(bad) = values.iter().find(|v| v.rows() != rows) {
            return Err(Error::shape("concat", format!("{rows} rows"), bad.rows()));
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let out = Tensor::new(vec![rows, total], data)?;
        Ok(first.graph.derived(out, Op::Concat(ids.clone()), &ids))
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'g>> {
        let a = self.value();
        if start >= end || end > a.cols() {
            return Err(Error::shape("slice_cols", format!("range within 0..{}", a.cols()), format!("{start}..{end}")));
        }
        let rows = a.rows();
        let mut data = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            data.extend_from_slice(&a.row(r)[start..end]);
        }
        let out = Tensor::new(vec![rows, end - start], data)?;
        Ok(self.graph.derived(out, Op::Slice { input: self.id, start }, &[self.id]))
    }

    /// Row lookup into an embedding table.
    pub fn gather_rows(self, indices: &[usize]) -> Result<Var<'g>> {
        let t = self.value();
        let n = t.rows();
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows with no indices"));
        }
        let d = t.cols();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            if i >= n {
                return Err(Error::OutOfRange { what: "embedding row", index: i, bound: n });
            }
            data.extend_from_slice(t.row(i));
        }
        let out = Tensor::new(vec![indices.len(), d], data)?;
        let op = Op::Gather { table: self.id, indices: indices.to_vec() };
        Ok(self.graph.derived(out, op, &[self.id]))
    }

    pub fn sum(self) -> Var<'g> {
        let s = self.value().sum();
        self.graph.derived(Tensor::scalar(s), Op::Sum(self.id), &[self.id])
    }

    /// `log softmax(row)[label]` for every row, as a column.
    pub fn log_softmax_pick(self, labels: &[usize]) -> Result<Var<'g>> {
        let logits = self.value();
        let (rows, n) = (logits.rows(), logits.cols());
        if labels.len() != rows {
            return Err(Error::shape("log_softmax_pick", format!("{rows} labels"), labels.len()));
        }
        let mut probs = Vec::with_capacity(rows * n);
        let mut picked = Vec::with_capacity(rows);
        for (r, &label) in labels.iter().enumerate() {
            if label >= n {
                return Err(Error::OutOfRange { what: "label", index: label, bound: n });
            }
            let row = logits.row(r);
            let lse = log_sum_exp(row);
            probs.extend(row.iter().map(|v| (v - lse).exp()));
            picked.push(row[label] - lse);
        }
        let out = Tensor::new(vec![rows, 1], picked)?;
        let op =
            Op::LogSoftmaxPick { logits: self.id, labels: labels.to_vec(), probs: Tensor::new(vec![rows, n], probs)? };
        Ok(self.graph.derived(out, op, &[self.id]))
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("zip of equal shapes")
}

/// `a × b`, reshaped to `shape`.
fn matmul(a: &Tensor, b: &Tensor, shape: &[usize]) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in orow.iter_mut().zip(&bd[p * m..(p + 1) * m]) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("matmul shape")
}

/// `a × bᵀ`, reshaped to `shape`.
fn matmul_bt(a: &Tensor, b: &Tensor, shape: &[usize]) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; n * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..m {
            let brow = &bd[j * k..(j + 1) * k];
            out[i * m + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    Tensor::new(shape.to_vec(), out).expect("matmul_bt shape")
}

/// `aᵀ × b`, reshaped to `shape`.
fn matmul_at(a: &Tensor, b: &Tensor, shape: &[usize]) -> Tensor {
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; k * m];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..n {
        let brow = &bd[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, &bv) in out[p * m..(p + 1) * m].iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::new(shape.to_vec(), out).expect("matmul_at shape")
}
