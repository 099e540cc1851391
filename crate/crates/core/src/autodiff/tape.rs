use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

/// Every differentiable operation the tape knows how to record.
///
/// Shape rules:
/// - `Matmul`: `[m,k] x [k,n] -> [m,n]`
/// - `Add`, `Sub`, `Mul`: identical shapes, or either side a one-element tensor
/// - `AddBias`: `[m,n] + [n] -> [m,n]`
/// - `Tanh`, `Relu`, `Sigmoid`, `Exp`, `Scale`, `Shift`, `Clamp`: elementwise
/// - `Softmax`: row-wise over the last axis of a rank-1 or rank-2 tensor
/// - `Mean`, `Sum`, `SumSq`: any shape to a scalar
/// - `Concat`: rank-2 parts agreeing on the other axis
/// - `Slice`: half-open range along one axis of a rank-2 tensor
/// - `EmbedLookup`: table `[V,e]` with ids `< V` to `[len(ids), e]`
/// - `CrossEntropy`: logits `[n,V]`, one optional target per row, to the mean
///   negative log-likelihood over the rows that carry a target
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Matmul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    Shift(f64),
    AddBias,
    Tanh,
    Relu,
    Sigmoid,
    Exp,
    Clamp(f64, f64),
    Softmax,
    Mean,
    Sum,
    SumSq,
    Concat(Axis),
    Slice { axis: Axis, start: usize, end: usize },
    EmbedLookup(Vec<usize>),
    CrossEntropy(Vec<Option<usize>>),
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Matmul => "matmul",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale(_) => "scale",
            OpKind::Shift(_) => "shift",
            OpKind::AddBias => "add_bias",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Exp => "exp",
            OpKind::Clamp(..) => "clamp",
            OpKind::Softmax => "softmax",
            OpKind::Mean => "mean",
            OpKind::Sum => "sum",
            OpKind::SumSq => "sum_sq",
            OpKind::Concat(_) => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::EmbedLookup(_) => "embed_lookup",
            OpKind::CrossEntropy(_) => "cross_entropy",
        }
    }
}

#[derive(Clone, Debug)]
enum Origin {
    Leaf,
    Constant,
    Op { kind: OpKind, inputs: Vec<Var> },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    origin: Origin,
    needs_grad: bool,
}

/// Define-by-run record of a computation. Parents always precede children,
/// so node ids are a topological order.
#[derive(Default, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zero for nodes the loss does not reach.
    pub fn wrt(&self, v: Var) -> Tensor {
        let shape = &self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn raw(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Appends the gradient of `v` (zeros if unreached) to `out`.
    pub fn extend_into(&self, v: Var, out: &mut Vec<f64>) {
        match &self.grads[v.0] {
            Some(g) => out.extend_from_slice(g),
            None => out.extend(std::iter::repeat(0.0).take(self.shapes[v.0].iter().product())),
        }
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn rank2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::invalid(op, format!("expected a rank-2 tensor, got shape {s:?}"))),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, origin: Origin, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, origin, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Origin::Leaf, true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "constant" });
        }
        Ok(self.push(value, Origin::Constant, false))
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.push(value, Origin::Constant, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Evaluates `kind` on `inputs` and records the result.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[Var]) -> Result<Var> {
        let op = kind.name();
        let arity_ok = match kind {
            OpKind::Matmul | OpKind::Add | OpKind::Sub | OpKind::Mul | OpKind::AddBias => {
                inputs.len() == 2
            }
            OpKind::Concat(_) => !inputs.is_empty(),
            _ => inputs.len() == 1,
        };
        if !arity_ok {
            return Err(Error::invalid(op, format!("wrong number of inputs ({})", inputs.len())));
        }
        let value = self.evaluate(&kind, inputs)?;
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        Ok(self.push(value, Origin::Op { kind, inputs: inputs.to_vec() }, needs_grad))
    }

    fn evaluate(&self, kind: &OpKind, inputs: &[Var]) -> Result<Tensor> {
        let op = kind.name();
        let x = &self.nodes[inputs[0].0].value;
        match kind {
            OpKind::Matmul => {
                let y = &self.nodes[inputs[1].0].value;
                let (m, k) = rank2(op, x)?;
                let (k2, n) = rank2(op, y)?;
                if k != k2 {
                    return Err(shape_err(op, x, y));
                }
                Tensor::matrix(m, n, kernels::matmul(x.data(), y.data(), m, k, n))
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let y = &self.nodes[inputs[1].0].value;
                let f = match kind {
                    OpKind::Add => |a: f64, b: f64| a + b,
                    OpKind::Sub => |a: f64, b: f64| a - b,
                    _ => |a: f64, b: f64| a * b,
                };
                if x.shape() == y.shape() {
                    let data = x.data().iter().zip(y.data()).map(|(&a, &b)| f(a, b)).collect();
                    Tensor::new(x.shape().to_vec(), data)
                } else if y.shape() == [1] {
                    let b = y.item();
                    Ok(x.map(|a| f(a, b)))
                } else if x.shape() == [1] {
                    let a = x.item();
                    Ok(y.map(|b| f(a, b)))
                } else {
                    Err(shape_err(op, x, y))
                }
            }
            OpKind::Scale(c) => Ok(x.map(|a| a * c)),
            OpKind::Shift(c) => Ok(x.map(|a| a + c)),
            OpKind::AddBias => {
                let b = &self.nodes[inputs[1].0].value;
                let (m, n) = rank2(op, x)?;
                if b.numel() != n || b.shape().len() > 2 || (b.shape().len() == 2 && b.shape()[0] != 1) {
                    return Err(shape_err(op, x, b));
                }
                let mut data = x.data().to_vec();
                for i in 0..m {
                    for (o, bv) in data[i * n..(i + 1) * n].iter_mut().zip(b.data()) {
                        *o += bv;
                    }
                }
                Tensor::matrix(m, n, data)
            }
            OpKind::Tanh => Ok(x.map(f64::tanh)),
            OpKind::Relu => Ok(x.map(|a| a.max(0.0))),
            OpKind::Sigmoid => Ok(x.map(kernels::sigmoid)),
            OpKind::Exp => Ok(x.map(f64::exp)),
            OpKind::Clamp(lo, hi) => {
                if lo > hi {
                    return Err(Error::invalid(op, format!("empty range [{lo}, {hi}]")));
                }
                Ok(x.map(|a| a.clamp(*lo, *hi)))
            }
            OpKind::Softmax => {
                let (m, n) = x.dims2().ok_or_else(|| Error::invalid(op, "rank > 2"))?;
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    kernels::softmax_row(x.row(i), &mut data[i * n..(i + 1) * n]);
                }
                Tensor::new(x.shape().to_vec(), data)
            }
            OpKind::Mean => Ok(Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)),
            OpKind::Sum => Ok(Tensor::scalar(x.data().iter().sum())),
            OpKind::SumSq => Ok(Tensor::scalar(x.norm_sq())),
            OpKind::Concat(axis) => {
                let parts: Vec<&Tensor> = inputs.iter().map(|v| &self.nodes[v.0].value).collect();
                let dims = parts.iter().map(|t| rank2(op, t)).collect::<Result<Vec<_>>>()?;
                match axis {
                    Axis::Rows => {
                        let cols = dims[0].1;
                        if let Some(i) = dims.iter().position(|d| d.1 != cols) {
                            return Err(shape_err(op, parts[0], parts[i]));
                        }
                        let rows = dims.iter().map(|d| d.0).sum();
                        let data = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
                        Tensor::matrix(rows, cols, data)
                    }
                    Axis::Cols => {
                        let rows = dims[0].0;
                        if let Some(i) = dims.iter().position(|d| d.0 != rows) {
                            return Err(shape_err(op, parts[0], parts[i]));
                        }
                        let cols = dims.iter().map(|d| d.1).sum();
                        let mut data = Vec::with_capacity(rows * cols);
                        for r in 0..rows {
                            for t in &parts {
                                data.extend_from_slice(t.row(r));
                            }
                        }
                        Tensor::matrix(rows, cols, data)
                    }
                }
            }
            OpKind::Slice { axis, start, end } => {
                let (m, n) = rank2(op, x)?;
                let extent = if *axis == Axis::Rows { m } else { n };
                if start >= end || *end > extent {
                    return Err(Error::invalid(
                        op,
                        format!("range {start}..{end} out of bounds for shape {:?}", x.shape()),
                    ));
                }
                match axis {
                    Axis::Rows => Tensor::matrix(end - start, n, x.data()[start * n..end * n].to_vec()),
                    Axis::Cols => {
                        let mut data = Vec::with_capacity(m * (end - start));
                        for r in 0..m {
                            data.extend_from_slice(&x.row(r)[*start..*end]);
                        }
                        Tensor::matrix(m, end - start, data)
                    }
                }
            }
            OpKind::EmbedLookup(ids) => {
                let (v, e) = rank2(op, x)?;
                if ids.is_empty() {
                    return Err(Error::invalid(op, "empty id list"));
                }
                if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
                    return Err(Error::invalid(op, format!("id {bad} outside vocabulary of {v}")));
                }
                let mut data = Vec::with_capacity(ids.len() * e);
                for &i in ids {
                    data.extend_from_slice(x.row(i));
                }
                Tensor::matrix(ids.len(), e, data)
            }
            OpKind::CrossEntropy(targets) => {
                let (m, v) = rank2(op, x)?;
                if targets.len() != m {
                    return Err(Error::invalid(op, format!("{} targets for {m} rows", targets.len())));
                }
                let mut total = 0.0;
                let mut count = 0usize;
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = *t {
                        if t >= v {
                            return Err(Error::invalid(op, format!("target {t} outside vocabulary of {v}")));
                        }
                        let row = x.row(i);
                        total += kernels::log_sum_exp(row) - row[t];
                        count += 1;
                    }
                }
                if count == 0 {
                    return Err(Error::invalid(op, "no target rows"));
                }
                Ok(Tensor::scalar(total / count as f64))
            }
        }
    }

    /// Reverse sweep from a scalar `loss`. Leaves the loss does not reach, and
    /// anything behind a [`Tape::detach`], get no entry (zero gradient).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::invalid(
                "backward",
                format!("loss must be a scalar, got shape {:?}", loss_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Origin::Op { kind, inputs } = &node.origin else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(kind, inputs, &node.value, &g, &mut grads);
            grads[id] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(
        &self,
        kind: &OpKind,
        inputs: &[Var],
        out: &Tensor,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let acc = |v: Var, grads: &mut [Option<Vec<f64>>], f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(slot);
        };
        let x = inputs[0];
        match kind {
            OpKind::Matmul => {
                let (a, b) = (val(inputs[0]), val(inputs[1]));
                let (m, k) = (a.shape()[0], a.shape()[1]);
                let n = b.shape()[1];
                acc(inputs[0], grads, &|s| kernels::matmul_a_bt_acc(s, g, b.data(), m, k, n));
                acc(inputs[1], grads, &|s| kernels::matmul_at_b_acc(s, a.data(), g, m, k, n));
            }
            OpKind::Add | OpKind::Sub | OpKind::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (av, bv) = (val(a), val(b));
                let sign = if *kind == OpKind::Sub { -1.0 } else { 1.0 };
                let is_mul = *kind == OpKind::Mul;
                // d out / d a (elementwise, aligned with the output)
                let local = |other: &Tensor, i: usize| -> f64 {
                    if other.numel() == 1 {
                        other.data()[0]
                    } else {
                        other.data()[i]
                    }
                };
                for (v, other, s) in [(a, bv, 1.0), (b, av, sign)] {
                    if !wants(v) {
                        continue;
                    }
                    let scalar_side = val(v).numel() == 1 && out.numel() != 1;
                    acc(v, grads, &|slot| {
                        for (i, &gi) in g.iter().enumerate() {
                            let d = if is_mul { local(other, i) } else { s };
                            if scalar_side {
                                slot[0] += gi * d;
                            } else {
                                slot[i] += gi * d;
                            }
                        }
                    });
                }
            }
            OpKind::Scale(c) => acc(x, grads, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += c * gi)),
            OpKind::Shift(_) => acc(x, grads, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi)),
            OpKind::AddBias => {
                let n = out.shape()[1];
                acc(inputs[0], grads, &|s| s.iter_mut().zip(g).for_each(|(o, gi)| *o += gi));
                acc(inputs[1], grads, &|s| {
                    for row in g.chunks(n) {
                        s.iter_mut().zip(row).for_each(|(o, gi)| *o += gi);
                    }
                });
            }
            OpKind::Tanh => acc(x, grads, &|s| {
                for ((o, gi), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * (1.0 - y * y);
                }
            }),
            OpKind::Relu => acc(x, grads, &|s| {
                for ((o, gi), xi) in s.iter_mut().zip(g).zip(val(x).data()) {
                    if *xi > 0.0 {
                        *o += gi;
                    }
                }
            }),
            OpKind::Sigmoid => acc(x, grads, &|s| {
                for ((o, gi), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * y * (1.0 - y);
                }
            }),
            OpKind::Exp => acc(x, grads, &|s| {
                for ((o, gi), y) in s.iter_mut().zip(g).zip(out.data()) {
                    *o += gi * y;
                }
            }),
            OpKind::Clamp(lo, hi) => acc(x, grads, &|s| {
                for ((o, gi), xi) in s.iter_mut().zip(g).zip(val(x).data()) {
                    if xi > lo && xi < hi {
                        *o += gi;
                    }
                }
            }),
            OpKind::Softmax => {
                let (m, n) = out.dims2().expect("softmax output rank");
                acc(x, grads, &|s| {
                    for i in 0..m {
                        let y = &out.data()[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let inner = kernels::dot(y, gr);
                        for j in 0..n {
                            s[i * n + j] += y[j] * (gr[j] - inner);
                        }
                    }
                });
            }
            OpKind::Mean => {
                let n = val(x).numel() as f64;
                acc(x, grads, &|s| s.iter_mut().for_each(|o| *o += g[0] / n));
            }
            OpKind::Sum => acc(x, grads, &|s| s.iter_mut().for_each(|o| *o += g[0])),
            OpKind::SumSq => acc(x, grads, &|s| {
                for (o, xi) in s.iter_mut().zip(val(x).data()) {
                    *o += 2.0 * xi * g[0];
                }
            }),
            OpKind::Concat(axis) => {
                let total_cols = out.shape()[1];
                let mut offset = 0;
                for &part in inputs {
                    let (r, c) = (val(part).shape()[0], val(part).shape()[1]);
                    match axis {
                        Axis::Rows => {
                            let range = offset * total_cols..(offset + r) * total_cols;
                            acc(part, grads, &|s| {
                                s.iter_mut().zip(&g[range.clone()]).for_each(|(o, gi)| *o += gi)
                            });
                            offset += r;
                        }
                        Axis::Cols => {
                            acc(part, grads, &|s| {
                                for row in 0..r {
                                    let src = &g[row * total_cols + offset..row * total_cols + offset + c];
                                    s[row * c..(row + 1) * c].iter_mut().zip(src).for_each(|(o, gi)| *o += gi);
                                }
                            });
                            offset += c;
                        }
                    }
                }
            }
            OpKind::Slice { axis, start, end } => {
                let n = val(x).shape()[1];
                acc(x, grads, &|s| match axis {
                    Axis::Rows => s[start * n..end * n].iter_mut().zip(g).for_each(|(o, gi)| *o += gi),
                    Axis::Cols => {
                        let w = end - start;
                        for (r, row) in g.chunks(w).enumerate() {
                            s[r * n + start..r * n + end].iter_mut().zip(row).for_each(|(o, gi)| *o += gi);
                        }
                    }
                });
            }
            OpKind::EmbedLookup(ids) => {
                let e = val(x).shape()[1];
                acc(x, grads, &|s| {
                    for (row, &id) in g.chunks(e).zip(ids) {
                        s[id * e..(id + 1) * e].iter_mut().zip(row).for_each(|(o, gi)| *o += gi);
                    }
                });
            }
            OpKind::CrossEntropy(targets) => {
                let logits = val(x);
                let v = logits.shape()[1];
                let count = targets.iter().flatten().count() as f64;
                acc(x, grads, &|s| {
                    let mut probs = vec![0.0; v];
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        kernels::softmax_row(logits.row(i), &mut probs);
                        probs[t] -= 1.0;
                        for (o, p) in s[i * v..(i + 1) * v].iter_mut().zip(&probs) {
                            *o += g[0] * p / count;
                        }
                    }
                });
            }
        }
    }
}

/// Convenience wrappers; each records exactly one op.
impl Tape {
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Matmul, &[a, b])
    }
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Add, &[a, b])
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Sub, &[a, b])
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.forward_op(OpKind::Mul, &[a, b])
    }
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward_op(OpKind::Scale(c), &[a])
    }
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var> {
        self.forward_op(OpKind::Shift(c), &[a])
    }
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.forward_op(OpKind::AddBias, &[x, bias])
    }
    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Tanh, &[a])
    }
    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Relu, &[a])
    }
    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Sigmoid, &[a])
    }
    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Exp, &[a])
    }
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.forward_op(OpKind::Clamp(lo, hi), &[a])
    }
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Softmax, &[a])
    }
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Mean, &[a])
    }
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::Sum, &[a])
    }
    pub fn sum_sq(&mut self, a: Var) -> Result<Var> {
        self.forward_op(OpKind::SumSq, &[a])
    }
    pub fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        self.forward_op(OpKind::Concat(axis), parts)
    }
    pub fn slice(&mut self, a: Var, axis: Axis, start: usize, end: usize) -> Result<Var> {
        self.forward_op(OpKind::Slice { axis, start, end }, &[a])
    }
    pub fn embed_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.forward_op(OpKind::EmbedLookup(ids.to_vec()), &[table])
    }
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        self.forward_op(OpKind::CrossEntropy(targets.to_vec()), &[logits])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_example() {
        let mut tape = Tape::new();
        let a = tape.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = tape.constant(m(2, 1, &[1.0, 1.0])).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &m(2, 1, &[3.0, 7.0]));
    }

    #[test]
    fn tanh_at_origin_and_uniform_softmax() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::vector(vec![0.0])).unwrap();
        let t = tape.tanh(z).unwrap();
        assert_eq!(tape.value(t).data(), &[0.0]);
        let x = tape.constant(Tensor::vector(vec![5.0, 5.0, 5.0])).unwrap();
        let s = tape.softmax(x).unwrap();
        for &p in tape.value(s).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_sq_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![3.0])).unwrap();
        let l = tape.sum_sq(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).data(), &[6.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let mut tape = Tape::new();
        assert!(tape.leaf(Tensor::vector(vec![f64::NAN])).is_err());
        let big = tape.constant(Tensor::vector(vec![1000.0])).unwrap();
        assert!(matches!(tape.exp(big), Err(Error::NonFinite { op: "exp" })));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn detached_inputs_get_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![2.0])).unwrap();
        let d = tape.detach(x);
        let y = tape.mul(x, d).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        // only the live branch contributes: d(x * const)/dx = const
        assert_eq!(g.wrt(x).data(), &[2.0]);
        assert_eq!(g.wrt(d).data(), &[0.0]);
    }

    #[test]
    fn scalar_broadcast_gradient_sums() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0])).unwrap();
        let s = tape.leaf(Tensor::scalar(2.0)).unwrap();
        let y = tape.mul(x, s).unwrap();
        let l = tape.sum(y).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(s).data(), &[6.0]);
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0, 2.0]);
    }

    #[test]
    fn out_of_vocab_lookup_rejected() {
        let mut tape = Tape::new();
        let t = tape.leaf(Tensor::zeros(&[4, 2])).unwrap();
        assert!(tape.embed_lookup(t, &[1, 4]).is_err());
    }
}
