//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] is an append-only arena. Every operation pushes a node holding
//! its value and the handles of its inputs, so append order is already a
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! A tape serves one forward/backward pass: a second call to `backward`
//! returns [`TapeError::AlreadyConsumed`]. Call [`Tape::clear`] (or build a
//! new tape) for the next step.

mod gradcheck;

pub use gradcheck::{finite_difference_check, GradCheckReport};

use thiserror::Error;

use crate::tensor::Tensor;

pub type Shape = (usize, usize);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TapeError {
    #[error("non-finite input value at flat index {index}")]
    NonFiniteInput { index: usize },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("backward needs a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Shape },
    #[error("tape was already consumed by a backward pass")]
    AlreadyConsumed,
    #[error("invalid argument to {op}: {reason}")]
    InvalidArgument { op: &'static str, reason: String },
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Affine {
        w: Var,
        b: Var,
        x: Var,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        normalized: Tensor,
        inv_std: Vec<f64>,
    },
    AddColumn {
        x: Var,
        column: Var,
    },
    Silu(Var),
    Tanh(Var),
    SliceRows {
        x: Var,
        start: usize,
    },
    ConcatRows(Var, Var),
    Sum(Var),
    Mse {
        pred: Var,
        target: Tensor,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    grad: Option<Tensor>,
    op: Op,
    requires_grad: bool,
    is_param: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

fn check_finite(values: &Tensor) -> Result<(), TapeError> {
    match values.as_slice().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TapeError::NonFiniteInput { index }),
        None => Ok(()),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drop every node and allow a fresh forward/backward pass.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.consumed = false;
    }

    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].value.shape()
    }

    /// Accumulated gradient, present after `backward` for every node that
    /// received a contribution and for every parameter.
    pub fn grad(&self, var: Var) -> Option<&Tensor> {
        self.nodes[var.0].grad.as_ref()
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Trainable leaf.
    pub fn parameter(&mut self, values: Tensor) -> Result<Var, TapeError> {
        check_finite(&values)?;
        Ok(self.push_node(values, Op::Leaf, true, true))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, values: Tensor) -> Result<Var, TapeError> {
        check_finite(&values)?;
        Ok(self.push_node(values, Op::Leaf, false, false))
    }

    /// Number of scalars held by parameter leaves.
    pub fn parameter_scalars(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| n.is_param)
            .map(|n| n.value.len())
            .sum()
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool, is_param: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
            is_param,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push_node(value, op, requires_grad, false)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TapeError> {
        let (lhs, rhs) = (self.shape(a), self.shape(b));
        if lhs != rhs {
            return Err(TapeError::ShapeMismatch { op, lhs, rhs });
        }
        Ok(())
    }

    fn scalar_operand(&self, op: &'static str, x: Var, s: Var) -> Result<(), TapeError> {
        if !self.value(s).is_scalar() {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: self.shape(x),
                rhs: self.shape(s),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c), &[x])
    }

    /// `x + c` for a fixed real `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v + c);
        self.push(value, Op::Offset(x), &[x])
    }

    /// `x + s` with `s` a `1 x 1` node broadcast over `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, TapeError> {
        self.scalar_operand("add_scalar", x, s)?;
        let c = self.value(s).item();
        let value = self.value(x).map(|v| v + c);
        Ok(self.push(value, Op::AddScalar(x, s), &[x, s]))
    }

    /// `s * x` with `s` a `1 x 1` node broadcast over `x`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, TapeError> {
        self.scalar_operand("mul_scalar", x, s)?;
        let c = self.value(s).item();
        let value = self.value(x).map(|v| v * c);
        Ok(self.push(value, Op::MulScalar(x, s), &[x, s]))
    }

    /// `W x + b`, where `x` is `n x B` (one sample per column), `W` is
    /// `m x n` and `b` is `m x 1`, broadcast across columns.
    pub fn affine(&mut self, w: Var, b: Var, x: Var) -> Result<Var, TapeError> {
        let (m, n) = self.shape(w);
        let (xn, batch) = self.shape(x);
        if xn != n {
            return Err(TapeError::ShapeMismatch {
                op: "affine",
                lhs: (m, n),
                rhs: (xn, batch),
            });
        }
        if self.shape(b) != (m, 1) {
            return Err(TapeError::ShapeMismatch {
                op: "affine",
                lhs: (m, 1),
                rhs: self.shape(b),
            });
        }
        let (wv, bv, xv) = (self.value(w), self.value(b), self.value(x));
        let mut out = Tensor::zeros(m, batch);
        for i in 0..m {
            let bias = bv.get(i, 0);
            for j in 0..batch {
                let mut acc = bias;
                for k in 0..n {
                    acc += wv.get(i, k) * xv.get(k, j);
                }
                out.set(i, j, acc);
            }
        }
        Ok(self.push(out, Op::Affine { w, b, x }, &[w, b, x]))
    }

    /// Per-column layer normalization with population variance.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TapeError> {
        let (d, batch) = self.shape(x);
        if d == 0 {
            return Err(TapeError::InvalidArgument {
                op: "layer_norm",
                reason: "empty feature dimension".into(),
            });
        }
        if !(eps > 0.0) {
            return Err(TapeError::InvalidArgument {
                op: "layer_norm",
                reason: format!("eps must be positive, got {eps}"),
            });
        }
        for p in [gain, bias] {
            if self.shape(p) != (d, 1) {
                return Err(TapeError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: (d, 1),
                    rhs: self.shape(p),
                });
            }
        }
        let xv = self.value(x);
        let mut normalized = Tensor::zeros(d, batch);
        let mut inv_std = Vec::with_capacity(batch);
        for j in 0..batch {
            let mean = (0..d).map(|i| xv.get(i, j)).sum::<f64>() / d as f64;
            let var = (0..d).map(|i| (xv.get(i, j) - mean).powi(2)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + eps).sqrt();
            for i in 0..d {
                normalized.set(i, j, (xv.get(i, j) - mean) * s);
            }
            inv_std.push(s);
        }
        let gv = self.value(gain);
        let scaled = Tensor::from_fn(d, batch, |i, j| gv.get(i, 0) * normalized.get(i, j));
        let core = self.push(
            scaled,
            Op::LayerNorm {
                x,
                gain,
                normalized,
                inv_std,
            },
            &[x, gain],
        );
        self.add_column(core, bias)
    }

    /// `x + c` where `c` is a `rows x 1` column broadcast across the columns of `x`.
    pub fn add_column(&mut self, x: Var, column: Var) -> Result<Var, TapeError> {
        let (rows, cols) = self.shape(x);
        if self.shape(column) != (rows, 1) {
            return Err(TapeError::ShapeMismatch {
                op: "add_column",
                lhs: (rows, 1),
                rhs: self.shape(column),
            });
        }
        let (xv, cv) = (self.value(x), self.value(column));
        let out = Tensor::from_fn(rows, cols, |i, j| xv.get(i, j) + cv.get(i, 0));
        Ok(self.push(out, Op::AddColumn { x, column }, &[x, column]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x), &[x])
    }

    /// Rows `start..start + len` of `x`.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TapeError> {
        let (rows, cols) = self.shape(x);
        if start + len > rows || len == 0 {
            return Err(TapeError::ShapeMismatch {
                op: "slice_rows",
                lhs: (rows, cols),
                rhs: (start + len, cols),
            });
        }
        let xv = self.value(x);
        let value = Tensor::from_fn(len, cols, |i, j| xv.get(start + i, j));
        Ok(self.push(value, Op::SliceRows { x, start }, &[x]))
    }

    /// Stack `a` on top of `b`.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let ((ra, ca), (rb, cb)) = (self.shape(a), self.shape(b));
        if ca != cb {
            return Err(TapeError::ShapeMismatch {
                op: "concat_rows",
                lhs: (ra, ca),
                rhs: (rb, cb),
            });
        }
        let (av, bv) = (self.value(a), self.value(b));
        let value = Tensor::from_fn(ra + rb, ca, |i, j| {
            if i < ra {
                av.get(i, j)
            } else {
                bv.get(i - ra, j)
            }
        });
        Ok(self.push(value, Op::ConcatRows(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).as_slice().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(x), &[x])
    }

    /// Mean of squared differences over every entry of `pred`.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var, TapeError> {
        let shape = self.shape(pred);
        if shape != target.shape() {
            return Err(TapeError::ShapeMismatch {
                op: "mse_loss",
                lhs: shape,
                rhs: target.shape(),
            });
        }
        if target.is_empty() {
            return Err(TapeError::InvalidArgument {
                op: "mse_loss",
                reason: "empty prediction".into(),
            });
        }
        let pv = self.value(pred);
        let n = pv.len() as f64;
        let loss = pv
            .as_slice()
            .iter()
            .zip(target.as_slice())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
            &[pred],
        ))
    }

    /// Propagate d(loss)/d(node) to every node that requires a gradient.
    ///
    /// Parameters that the loss does not depend on receive zeros.
    pub fn backward(&mut self, loss: Var) -> Result<(), TapeError> {
        if self.consumed {
            return Err(TapeError::AlreadyConsumed);
        }
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TapeError::NonScalarLoss { shape });
        }
        self.consumed = true;
        if self.nodes[loss.0].requires_grad {
            self.nodes[loss.0].grad = Some(Tensor::scalar(1.0));
        }
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.requires_grad {
                continue;
            }
            if let Some(grad) = node.grad.as_ref() {
                propagate(&node.op, &node.value, grad, before);
            }
        }
        for node in self.nodes.iter_mut().filter(|n| n.is_param) {
            if node.grad.is_none() {
                node.grad = Some(Tensor::zeros(node.value.rows(), node.value.cols()));
            }
        }
        Ok(())
    }
}

fn wants(nodes: &[Node], v: Var) -> bool {
    nodes[v.0].requires_grad
}

fn accumulate(nodes: &mut [Node], v: Var, contrib: Tensor) {
    let node = &mut nodes[v.0];
    match node.grad.as_mut() {
        Some(g) => {
            for (acc, c) in g.as_mut_slice().iter_mut().zip(contrib.as_slice()) {
                *acc += c;
            }
        }
        None => node.grad = Some(contrib),
    }
}

fn propagate(op: &Op, value: &Tensor, grad: &Tensor, nodes: &mut [Node]) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if wants(nodes, v) {
                    accumulate(nodes, v, grad.clone());
                }
            }
        }
        Op::Sub(a, b) => {
            if wants(nodes, *a) {
                accumulate(nodes, *a, grad.clone());
            }
            if wants(nodes, *b) {
                accumulate(nodes, *b, grad.map(|g| -g));
            }
        }
        Op::Mul(a, b) => {
            if wants(nodes, *a) {
                let c = grad.zip_map(&nodes[b.0].value, |g, y| g * y);
                accumulate(nodes, *a, c);
            }
            if wants(nodes, *b) {
                let c = grad.zip_map(&nodes[a.0].value, |g, x| g * x);
                accumulate(nodes, *b, c);
            }
        }
        Op::Scale(x, c) => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, grad.map(|g| g * c));
            }
        }
        Op::Offset(x) => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, grad.clone());
            }
        }
        Op::AddScalar(x, s) => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, grad.clone());
            }
            if wants(nodes, *s) {
                let total = grad.as_slice().iter().sum();
                accumulate(nodes, *s, Tensor::scalar(total));
            }
        }
        Op::MulScalar(x, s) => {
            if wants(nodes, *x) {
                let c = nodes[s.0].value.item();
                accumulate(nodes, *x, grad.map(|g| g * c));
            }
            if wants(nodes, *s) {
                let total = grad
                    .as_slice()
                    .iter()
                    .zip(nodes[x.0].value.as_slice())
                    .map(|(g, x)| g * x)
                    .sum();
                accumulate(nodes, *s, Tensor::scalar(total));
            }
        }
        Op::Affine { w, b, x } => {
            let (m, batch) = grad.shape();
            let n = nodes[x.0].value.rows();
            if wants(nodes, *w) {
                let xv = &nodes[x.0].value;
                let c = Tensor::from_fn(m, n, |i, k| {
                    (0..batch).map(|j| grad.get(i, j) * xv.get(k, j)).sum()
                });
                accumulate(nodes, *w, c);
            }
            if wants(nodes, *b) {
                let c = Tensor::from_fn(m, 1, |i, _| (0..batch).map(|j| grad.get(i, j)).sum());
                accumulate(nodes, *b, c);
            }
            if wants(nodes, *x) {
                let wv = &nodes[w.0].value;
                let c = Tensor::from_fn(n, batch, |k, j| {
                    (0..m).map(|i| wv.get(i, k) * grad.get(i, j)).sum()
                });
                accumulate(nodes, *x, c);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            normalized,
            inv_std,
        } => {
            let (d, batch) = grad.shape();
            if wants(nodes, *gain) {
                let c = Tensor::from_fn(d, 1, |i, _| {
                    (0..batch)
                        .map(|j| grad.get(i, j) * normalized.get(i, j))
                        .sum()
                });
                accumulate(nodes, *gain, c);
            }
            if wants(nodes, *x) {
                let gv = &nodes[gain.0].value;
                let mut c = Tensor::zeros(d, batch);
                for (j, &s) in inv_std.iter().enumerate() {
                    let dxhat: Vec<f64> = (0..d).map(|i| grad.get(i, j) * gv.get(i, 0)).collect();
                    let mean_dxhat = dxhat.iter().sum::<f64>() / d as f64;
                    let mean_dxhat_xhat = dxhat
                        .iter()
                        .enumerate()
                        .map(|(i, g)| g * normalized.get(i, j))
                        .sum::<f64>()
                        / d as f64;
                    for (i, g) in dxhat.iter().enumerate() {
                        let xhat = normalized.get(i, j);
                        c.set(i, j, s * (g - mean_dxhat - xhat * mean_dxhat_xhat));
                    }
                }
                accumulate(nodes, *x, c);
            }
        }
        Op::AddColumn { x, column } => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, grad.clone());
            }
            if wants(nodes, *column) {
                let (d, batch) = grad.shape();
                let c = Tensor::from_fn(d, 1, |i, _| (0..batch).map(|j| grad.get(i, j)).sum());
                accumulate(nodes, *column, c);
            }
        }
        Op::Silu(x) => {
            if wants(nodes, *x) {
                let c = grad.zip_map(&nodes[x.0].value, |g, x| {
                    let s = sigmoid(x);
                    g * s * (1.0 + x * (1.0 - s))
                });
                accumulate(nodes, *x, c);
            }
        }
        Op::Tanh(x) => {
            if wants(nodes, *x) {
                accumulate(nodes, *x, grad.zip_map(value, |g, y| g * (1.0 - y * y)));
            }
        }
        Op::SliceRows { x, start } => {
            if wants(nodes, *x) {
                let (rows, cols) = nodes[x.0].value.shape();
                let len = grad.rows();
                let c = Tensor::from_fn(rows, cols, |i, j| {
                    if i >= *start && i < start + len {
                        grad.get(i - start, j)
                    } else {
                        0.0
                    }
                });
                accumulate(nodes, *x, c);
            }
        }
        Op::ConcatRows(a, b) => {
            let ra = nodes[a.0].value.rows();
            let (total, cols) = grad.shape();
            if wants(nodes, *a) {
                accumulate(nodes, *a, Tensor::from_fn(ra, cols, |i, j| grad.get(i, j)));
            }
            if wants(nodes, *b) {
                let c = Tensor::from_fn(total - ra, cols, |i, j| grad.get(i + ra, j));
                accumulate(nodes, *b, c);
            }
        }
        Op::Sum(x) => {
            if wants(nodes, *x) {
                let (rows, cols) = nodes[x.0].value.shape();
                accumulate(nodes, *x, Tensor::filled(rows, cols, grad.item()));
            }
        }
        Op::Mse { pred, target } => {
            if wants(nodes, *pred) {
                let pv = &nodes[pred.0].value;
                let scale = 2.0 * grad.item() / pv.len() as f64;
                accumulate(nodes, *pred, pv.zip_map(target, |p, t| scale * (p - t)));
            }
        }
    }
}

#[cfg(test)]
mod tests;
