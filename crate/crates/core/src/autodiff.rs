//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every example (define-by-run). Parameters live
//! in a [`ParamStore`] and are borrowed by the tape without copying. Calling
//! [`Tape::backward`] returns a new [`Gradients`] value each time, so repeated
//! calls on the same tape produce identical gradients; nothing accumulates on
//! the tape itself. Gradients reach the parameters through
//! [`Gradients::accumulate_into`], and the training loop zeroes them with
//! [`ParamStore::zero_grad`] between steps.
//!
//! There is no broadcasting. Every op checks its input shapes and rejects
//! anything that does not match exactly.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major array with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::shape("tensor", format!("invalid shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", values.len()),
            ));
        }
        if !all_finite(&values) {
            return Err(Error::NonFinite { op: "tensor" });
        }
        Ok(Tensor {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n]).expect("valid zero tensor")
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(vec![1], vec![value])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.fill(0.0);
        }
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor.with_grad());
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }
}

/// The differentiable primitives a tape can record.
///
/// | kind          | inputs                          | output        |
/// |---------------|---------------------------------|---------------|
/// | `MatVec`      | `[m, n]`, `[n]`                 | `[m]`         |
/// | `MatMul`      | `[m, k]`, `[k, n]`              | `[m, n]`      |
/// | `Add`, `Mul`  | two tensors of equal shape      | same shape    |
/// | `Tanh`, `Sigmoid`, `Scale` | any                | same shape    |
/// | `Concat`      | one or more 1-D tensors         | `[sum of lengths]` |
/// | `Slice`       | any (flat row-major view)       | `[len]`       |
/// | `Softmax`     | `[n]` or `[rows, n]`, per row   | same shape    |
/// | `WeightedSum` | `[n]` weights, then n tensors `[d]` | `[d]`     |
/// | `Sum`         | any                             | `[1]`         |
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OpKind {
    MatVec,
    MatMul,
    Add,
    Mul,
    Tanh,
    Sigmoid,
    Concat,
    Slice { start: usize, len: usize },
    Softmax,
    WeightedSum,
    Scale(f64),
    Sum,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatVec => "matvec",
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "elementwise_mul",
            OpKind::Tanh => "tanh",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Softmax => "softmax",
            OpKind::WeightedSum => "weighted_sum",
            OpKind::Scale(_) => "scale",
            OpKind::Sum => "sum",
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param,
    Apply(OpKind, Vec<usize>),
    CrossEntropy { logits: usize, gold: usize },
}

#[derive(Debug)]
struct Node<'p> {
    op: Op,
    shape: Vec<usize>,
    value: Cow<'p, [f64]>,
    requires_grad: bool,
}

/// A tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Linear record of every operation in one forward pass.
#[derive(Debug)]
pub struct Tape<'p> {
    id: u64,
    nodes: Vec<Node<'p>>,
    param_nodes: Vec<(ParamId, usize)>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn index(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::DetachedTensor);
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Cow<'p, [f64]>, rg: bool) -> Var {
        self.nodes.push(Node {
            op,
            shape,
            value,
            requires_grad: rg,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Records a copy of `tensor`; it receives a gradient if it requires one.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        self.push(
            Op::Leaf,
            tensor.shape.clone(),
            Cow::Owned(tensor.values.clone()),
            tensor.requires_grad,
        )
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, shape: Vec<usize>, values: Vec<f64>) -> Result<Var> {
        let t = Tensor::new(shape, values)?;
        Ok(self.push(Op::Leaf, t.shape, Cow::Owned(t.values), false))
    }

    pub fn constant_vector(&mut self, values: Vec<f64>) -> Result<Var> {
        self.constant(vec![values.len()], values)
    }

    /// Borrows a parameter. Repeated calls for the same id return the same var.
    pub fn param(&mut self, store: &'p ParamStore, id: ParamId) -> Result<Var> {
        if let Some(&(_, idx)) = self.param_nodes.iter().find(|(p, _)| *p == id) {
            return Ok(Var {
                tape: self.id,
                index: idx,
            });
        }
        let t = store.get(id);
        if !all_finite(&t.values) {
            return Err(Error::NonFinite { op: "param" });
        }
        let v = self.push(
            Op::Param,
            t.shape.clone(),
            Cow::Borrowed(&t.values),
            t.requires_grad,
        );
        self.param_nodes.push((id, v.index));
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[self.index(v).expect("var from this tape")].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[self.index(v).expect("var from this tape")].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn matvec(&mut self, m: Var, x: Var) -> Result<Var> {
        self.apply(OpKind::MatVec, &[m, x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sigmoid, &[x])
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        self.apply(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.apply(OpKind::Slice { start, len }, &[x])
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Softmax, &[x])
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let mut inputs = Vec::with_capacity(items.len() + 1);
        inputs.push(weights);
        inputs.extend_from_slice(items);
        self.apply(OpKind::WeightedSum, &inputs)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.apply(OpKind::Scale(factor), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.apply(OpKind::Sum, &[x])
    }

    /// Records `kind` applied to `inputs` and computes its forward value.
    pub fn apply(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let idx = inputs
            .iter()
            .map(|&v| self.index(v))
            .collect::<Result<Vec<_>>>()?;
        let (shape, value) = self.forward(kind, &idx)?;
        if !all_finite(&value) {
            return Err(Error::NonFinite { op: kind.name() });
        }
        let rg = idx.iter().any(|&i| self.nodes[i].requires_grad);
        Ok(self.push(Op::Apply(kind, idx), shape, Cow::Owned(value), rg))
    }

    fn arity(kind: OpKind, idx: &[usize], expected: usize) -> Result<()> {
        if idx.len() != expected {
            return Err(Error::shape(
                kind.name(),
                format!("expected {expected} inputs, got {}", idx.len()),
            ));
        }
        Ok(())
    }

    fn forward(&self, kind: OpKind, idx: &[usize]) -> Result<(Vec<usize>, Vec<f64>)> {
        let op = kind.name();
        match kind {
            OpKind::MatVec => {
                Self::arity(kind, idx, 2)?;
                let (m, x) = (&self.nodes[idx[0]], &self.nodes[idx[1]]);
                if m.shape.len() != 2 || x.shape != [m.shape[1]] {
                    return Err(Error::shape(op, format!("{:?} x {:?}", m.shape, x.shape)));
                }
                let (rows, cols) = (m.shape[0], m.shape[1]);
                let y = (0..rows)
                    .map(|r| dot(&m.value[r * cols..(r + 1) * cols], &x.value))
                    .collect();
                Ok((vec![rows], y))
            }
            OpKind::MatMul => {
                Self::arity(kind, idx, 2)?;
                let (a, b) = (&self.nodes[idx[0]], &self.nodes[idx[1]]);
                if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
                    return Err(Error::shape(op, format!("{:?} x {:?}", a.shape, b.shape)));
                }
                let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                let mut c = vec![0.0; m * n];
                for i in 0..m {
                    let row = &mut c[i * n..(i + 1) * n];
                    for p in 0..k {
                        axpy(a.value[i * k + p], &b.value[p * n..(p + 1) * n], row);
                    }
                }
                Ok((vec![m, n], c))
            }
            OpKind::Add | OpKind::Mul => {
                Self::arity(kind, idx, 2)?;
                let (a, b) = (&self.nodes[idx[0]], &self.nodes[idx[1]]);
                if a.shape != b.shape {
                    return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape, b.shape)));
                }
                let out = if kind == OpKind::Add {
                    a.value.iter().zip(b.value.iter()).map(|(x, y)| x + y).collect()
                } else {
                    a.value.iter().zip(b.value.iter()).map(|(x, y)| x * y).collect()
                };
                Ok((a.shape.clone(), out))
            }
            OpKind::Tanh | OpKind::Sigmoid | OpKind::Scale(_) => {
                Self::arity(kind, idx, 1)?;
                let x = &self.nodes[idx[0]];
                let out = match kind {
                    OpKind::Tanh => x.value.iter().map(|v| v.tanh()).collect(),
                    OpKind::Sigmoid => x.value.iter().map(|&v| sigmoid(v)).collect(),
                    OpKind::Scale(c) => x.value.iter().map(|v| c * v).collect(),
                    _ => unreachable!(),
                };
                Ok((x.shape.clone(), out))
            }
            OpKind::Concat => {
                if idx.is_empty() {
                    return Err(Error::shape(op, "no inputs"));
                }
                let mut out = Vec::new();
                for &i in idx {
                    let n = &self.nodes[i];
                    if n.shape.len() != 1 {
                        return Err(Error::shape(op, format!("non-vector input {:?}", n.shape)));
                    }
                    out.extend_from_slice(&n.value);
                }
                Ok((vec![out.len()], out))
            }
            OpKind::Slice { start, len } => {
                Self::arity(kind, idx, 1)?;
                let x = &self.nodes[idx[0]];
                if len == 0 || start + len > x.value.len() {
                    return Err(Error::shape(
                        op,
                        format!("range {start}..{} of {}", start + len, x.value.len()),
                    ));
                }
                Ok((vec![len], x.value[start..start + len].to_vec()))
            }
            OpKind::Softmax => {
                Self::arity(kind, idx, 1)?;
                let x = &self.nodes[idx[0]];
                if x.shape.len() > 2 {
                    return Err(Error::shape(op, format!("rank {} input", x.shape.len())));
                }
                let width = *x.shape.last().unwrap();
                let mut out = Vec::with_capacity(x.value.len());
                for row in x.value.chunks(width) {
                    out.extend(softmax(row));
                }
                Ok((x.shape.clone(), out))
            }
            OpKind::WeightedSum => {
                if idx.len() < 2 {
                    return Err(Error::shape(op, "needs weights and at least one item"));
                }
                let w = &self.nodes[idx[0]];
                let items = &idx[1..];
                if w.shape != [items.len()] {
                    return Err(Error::shape(
                        op,
                        format!("weights {:?} for {} items", w.shape, items.len()),
                    ));
                }
                let shape = self.nodes[items[0]].shape.clone();
                if shape.len() != 1 {
                    return Err(Error::shape(op, format!("non-vector item {shape:?}")));
                }
                let mut out = vec![0.0; shape[0]];
                for (k, &i) in items.iter().enumerate() {
                    let h = &self.nodes[i];
                    if h.shape != shape {
                        return Err(Error::shape(op, format!("{:?} vs {:?}", h.shape, shape)));
                    }
                    axpy(w.value[k], &h.value, &mut out);
                }
                Ok((shape, out))
            }
            OpKind::Sum => {
                Self::arity(kind, idx, 1)?;
                Ok((vec![1], vec![self.nodes[idx[0]].value.iter().sum()]))
            }
        }
    }

    /// `-log softmax(logits)[gold]`, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, gold: usize) -> Result<Var> {
        let li = self.index(logits)?;
        let node = &self.nodes[li];
        if node.shape.len() != 1 {
            return Err(Error::shape("cross_entropy", format!("{:?}", node.shape)));
        }
        if gold >= node.value.len() {
            return Err(Error::IndexOutOfRange {
                index: gold,
                len: node.value.len(),
            });
        }
        let loss = cross_entropy_value(&node.value, gold);
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "cross_entropy" });
        }
        let rg = node.requires_grad;
        Ok(self.push(
            Op::CrossEntropy { logits: li, gold },
            vec![1],
            Cow::Owned(vec![loss]),
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node that
    /// requires one. The tape is left untouched.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let li = self.index(loss)?;
        let n = self.nodes[li].value.len();
        if n != 1 {
            return Err(Error::NotScalar { len: n });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; li + 1];
        grads[li] = Some(vec![1.0]);

        for i in (0..=li).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.backprop_node(node, &dy, &mut grads);
            }
            grads[i] = Some(dy);
        }

        Ok(Gradients {
            tape: self.id,
            grads,
            params: self.param_nodes.clone(),
        })
    }

    fn backprop_node(&self, node: &Node<'_>, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let wants = |i: usize| nodes[i].requires_grad;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::CrossEntropy { logits, gold } => {
                if !wants(*logits) {
                    return;
                }
                // p_k = exp(z_k - z_gold - loss); the gold entry p_g - 1 is
                // taken as minus the other probabilities to avoid cancelling.
                let z = &nodes[*logits].value;
                let zg = z[*gold];
                let loss = node.value[0];
                let g = slot(grads, *logits, z.len());
                let mut rest = 0.0;
                for (k, gk) in g.iter_mut().enumerate() {
                    if k != *gold {
                        let p = (z[k] - zg - loss).exp();
                        rest += p;
                        *gk += dy[0] * p;
                    }
                }
                g[*gold] -= dy[0] * rest;
            }
            Op::Apply(kind, idx) => match *kind {
                OpKind::MatVec => {
                    let (mi, xi) = (idx[0], idx[1]);
                    let (m, x) = (&nodes[mi], &nodes[xi]);
                    let cols = m.shape[1];
                    if wants(mi) {
                        let gm = slot(grads, mi, m.value.len());
                        for (r, &d) in dy.iter().enumerate() {
                            axpy(d, &x.value, &mut gm[r * cols..(r + 1) * cols]);
                        }
                    }
                    if wants(xi) {
                        let gx = slot(grads, xi, cols);
                        for (r, &d) in dy.iter().enumerate() {
                            axpy(d, &m.value[r * cols..(r + 1) * cols], gx);
                        }
                    }
                }
                OpKind::MatMul => {
                    let (ai, bi) = (idx[0], idx[1]);
                    let (a, b) = (&nodes[ai], &nodes[bi]);
                    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
                    if wants(ai) {
                        let ga = slot(grads, ai, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                ga[i * k + p] +=
                                    dot(&dy[i * n..(i + 1) * n], &b.value[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if wants(bi) {
                        let gb = slot(grads, bi, k * n);
                        for i in 0..m {
                            for p in 0..k {
                                axpy(
                                    a.value[i * k + p],
                                    &dy[i * n..(i + 1) * n],
                                    &mut gb[p * n..(p + 1) * n],
                                );
                            }
                        }
                    }
                }
                OpKind::Add => {
                    for &i in idx {
                        if wants(i) {
                            axpy(1.0, dy, slot(grads, i, dy.len()));
                        }
                    }
                }
                OpKind::Mul => {
                    let (ai, bi) = (idx[0], idx[1]);
                    if wants(ai) {
                        let b = &nodes[bi].value;
                        let ga = slot(grads, ai, dy.len());
                        for ((g, d), bv) in ga.iter_mut().zip(dy).zip(b.iter()) {
                            *g += d * bv;
                        }
                    }
                    if wants(bi) {
                        let a = &nodes[ai].value;
                        let gb = slot(grads, bi, dy.len());
                        for ((g, d), av) in gb.iter_mut().zip(dy).zip(a.iter()) {
                            *g += d * av;
                        }
                    }
                }
                OpKind::Tanh => {
                    let y = &node.value;
                    let gx = slot(grads, idx[0], dy.len());
                    for ((g, d), yv) in gx.iter_mut().zip(dy).zip(y.iter()) {
                        *g += d * (1.0 - yv * yv);
                    }
                }
                OpKind::Sigmoid => {
                    let y = &node.value;
                    let gx = slot(grads, idx[0], dy.len());
                    for ((g, d), yv) in gx.iter_mut().zip(dy).zip(y.iter()) {
                        *g += d * yv * (1.0 - yv);
                    }
                }
                OpKind::Scale(c) => {
                    axpy(c, dy, slot(grads, idx[0], dy.len()));
                }
                OpKind::Concat => {
                    let mut offset = 0;
                    for &i in idx {
                        let len = nodes[i].value.len();
                        if wants(i) {
                            axpy(1.0, &dy[offset..offset + len], slot(grads, i, len));
                        }
                        offset += len;
                    }
                }
                OpKind::Slice { start, len } => {
                    let total = nodes[idx[0]].value.len();
                    let gx = slot(grads, idx[0], total);
                    axpy(1.0, dy, &mut gx[start..start + len]);
                }
                OpKind::Softmax => {
                    let y = &node.value;
                    let width = *node.shape.last().unwrap();
                    let gx = slot(grads, idx[0], y.len());
                    for ((yr, dr), gr) in y
                        .chunks(width)
                        .zip(dy.chunks(width))
                        .zip(gx.chunks_mut(width))
                    {
                        let inner = dot(yr, dr);
                        for k in 0..width {
                            gr[k] += yr[k] * (dr[k] - inner);
                        }
                    }
                }
                OpKind::WeightedSum => {
                    let wi = idx[0];
                    let items = &idx[1..];
                    if wants(wi) {
                        let dw: Vec<f64> =
                            items.iter().map(|&i| dot(dy, &nodes[i].value)).collect();
                        axpy(1.0, &dw, slot(grads, wi, items.len()));
                    }
                    let w = &nodes[wi].value;
                    for (k, &i) in items.iter().enumerate() {
                        if wants(i) {
                            axpy(w[k], dy, slot(grads, i, dy.len()));
                        }
                    }
                }
                OpKind::Sum => {
                    let gx = slot(grads, idx[0], nodes[idx[0]].value.len());
                    for g in gx.iter_mut() {
                        *g += dy[0];
                    }
                }
            },
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], i: usize, len: usize) -> &mut [f64] {
    grads[i].get_or_insert_with(|| vec![0.0; len])
}

/// Result of one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced the loss
    /// and requires a gradient.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        let &(_, idx) = self.params.iter().find(|(p, _)| *p == id)?;
        self.grads.get(idx).and_then(|g| g.as_deref())
    }

    /// Adds every parameter gradient into the matching tensor's grad buffer.
    pub fn accumulate_into(&self, store: &mut ParamStore) {
        for &(id, idx) in &self.params {
            if let Some(Some(g)) = self.grads.get(idx) {
                let t = store.get_mut(id);
                if t.requires_grad() {
                    axpy(1.0, g, t.grad_mut());
                }
            }
        }
    }
}

pub(crate) fn all_finite(xs: &[f64]) -> bool {
    xs.iter().all(|x| x.is_finite())
}

/// Dot product with four independent accumulators.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
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

/// Numerically stable softmax of one row.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-ln softmax(z)[gold]`, computed from the differences `z_k - z_gold` so a
/// confident prediction does not lose its small loss to cancellation.
pub fn cross_entropy_value(z: &[f64], gold: usize) -> f64 {
    let zg = z[gold];
    let max = z
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != gold)
        .map(|(_, &v)| v - zg)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return 0.0;
    }
    let shift = max.max(0.0);
    let sum: f64 = z
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != gold)
        .map(|(_, &v)| (v - zg - shift).exp())
        .sum();
    if shift == 0.0 {
        sum.ln_1p()
    } else {
        shift + ((-shift).exp() + sum).ln()
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient of a scalar function at `point` against
/// central finite differences with step `h`, returning the worst relative
/// error over all coordinates.
///
/// Non-differentiable points (for example `|x|` at zero) make this check
/// meaningless and should not be fed to it.
pub fn gradient_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>,
{
    if !all_finite(point.values()) || !h.is_finite() {
        return Err(Error::NonFinite {
            op: "gradient_check",
        });
    }
    let eval = |values: Vec<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(point.shape().to_vec(), values)?;
        let y = f(&mut tape, x)?;
        Ok(tape.scalar(y))
    };

    let mut tape = Tape::new();
    let x = tape.leaf(&point.clone().with_grad());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let zeros = vec![0.0; point.len()];
    let analytic = grads.wrt(x).unwrap_or(&zeros).to_vec();

    let mut worst = 0.0f64;
    for i in 0..point.len() {
        let mut plus = point.values().to_vec();
        plus[i] += h;
        let mut minus = point.values().to_vec();
        minus[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Finite-difference check of `loss` against the gradients of the listed
/// parameter coordinates. Each coordinate is perturbed in place and restored.
pub fn gradient_check_params<F>(
    store: &mut ParamStore,
    coords: &[(ParamId, usize)],
    h: f64,
    loss: F,
) -> Result<f64>
where
    F: for<'s> Fn(&mut Tape<'s>, &'s ParamStore) -> Result<Var>,
{
    let analytic: Vec<f64> = {
        let mut tape = Tape::new();
        let y = loss(&mut tape, store)?;
        let grads = tape.backward(y)?;
        coords
            .iter()
            .map(|&(id, k)| grads.param(id).map_or(0.0, |g| g[k]))
            .collect()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let y = loss(&mut tape, store)?;
        Ok(tape.scalar(y))
    };

    let mut worst = 0.0f64;
    for (&(id, k), &a) in coords.iter().zip(&analytic) {
        let orig = store.get(id).values()[k];
        store.get_mut(id).values_mut()[k] = orig + h;
        let up = eval(store);
        store.get_mut(id).values_mut()[k] = orig - h;
        let down = eval(store);
        store.get_mut(id).values_mut()[k] = orig;
        let numeric = (up? - down?) / (2.0 * h);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}
