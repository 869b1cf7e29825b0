//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive pushes one node holding its forward value and the
//! handles of its parents. [`Tape::backward`] walks the nodes in reverse
//! insertion order, which is a valid reverse topological order because a
//! node can only reference nodes created before it.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Norms below this are treated as zero by `l2_normalize`.
pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    LhsScalar,
    RhsScalar,
    /// lhs `[r, c]`, rhs `[c]`
    RhsRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Binary(BinKind, usize, usize, Bcast),
    Scale(usize, f64),
    AddScalar(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Relu(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize, f64),
    Clip(usize, f64, f64),
    Sum(usize),
    Mean(usize),
    MeanRows(usize),
    L2Normalize(usize),
    Dot(usize, usize),
    LogSumExp(usize),
    LogSumExpRows(usize),
    Diag(usize),
    Select(usize, usize),
    Stack(Vec<usize>),
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Binary(_, a, b, _) | Op::MatMul(a, b) | Op::Dot(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Transpose(a)
            | Op::Relu(a)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Ln(a, _)
            | Op::Clip(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::L2Normalize(a)
            | Op::LogSumExp(a)
            | Op::LogSumExpRows(a)
            | Op::Diag(a)
            | Op::Select(a, _) => vec![*a],
            Op::Stack(ids) => ids.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// What `detach` does with the values it cuts from the graph.
#[derive(Debug, Default)]
pub(crate) enum DetachLog {
    #[default]
    Off,
    Record(Vec<Tensor>),
    Replay { values: Vec<Tensor>, cursor: usize },
}

#[derive(Default)]
struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
    branch_sig: u64,
    detach: DetachLog,
}

/// Records primitive operations for a single forward/backward pass.
///
/// A tape is single-use: a second call to [`Tape::backward`] fails with
/// [`AutodiffError::TapeConsumed`].
#[derive(Default)]
pub struct Tape {
    inner: RefCell<Inner>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn with_detach_log(log: DetachLog) -> Self {
        let tape = Self::default();
        tape.inner.borrow_mut().detach = log;
        tape
    }

    pub(crate) fn take_detach_log(&self) -> DetachLog {
        std::mem::take(&mut self.inner.borrow_mut().detach)
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Hash of every branch decision taken by `relu` and `clip` so far.
    ///
    /// Two forward passes with equal signatures took the same side of every
    /// kink, so the recorded function is smooth between them.
    pub fn branch_signature(&self) -> u64 {
        self.inner.borrow().branch_sig
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Tensor::scalar(value))
    }

    fn value_rc(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.inner.borrow().nodes[id].value)
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut inner = self.inner.borrow_mut();
        let requires_grad = op
            .parents()
            .iter()
            .any(|&p| inner.nodes[p].requires_grad);
        inner.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: inner.nodes.len() - 1,
        }
    }

    fn mix_branches(&self, states: impl Iterator<Item = u8>) {
        let mut inner = self.inner.borrow_mut();
        let mut sig = inner.branch_sig;
        for s in states {
            sig = (sig ^ (s as u64 + 1)).wrapping_mul(FNV_PRIME);
        }
        inner.branch_sig = sig;
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        let loss_value = &inner.nodes[loss.id].value;
        if loss_value.rank() != 0 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            backprop_node(nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: Vec<f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contrib),
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Binary(kind, a, b, bc) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (alen, blen) = (av.len(), bv.len());
            let cols = out.cols();
            let lhs_at = |i: usize| match bc {
                Bcast::LhsScalar => 0,
                _ => i,
            };
            let rhs_at = |i: usize| match bc {
                Bcast::Same | Bcast::LhsScalar => i,
                Bcast::RhsScalar => 0,
                Bcast::RhsRow => i % cols,
            };
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; alen];
                for (i, gi) in g.iter().enumerate() {
                    ga[lhs_at(i)] += match kind {
                        BinKind::Add | BinKind::Sub => *gi,
                        BinKind::Mul => gi * bv.data()[rhs_at(i)],
                    };
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; blen];
                for (i, gi) in g.iter().enumerate() {
                    gb[rhs_at(i)] += match kind {
                        BinKind::Add => *gi,
                        BinKind::Sub => -gi,
                        BinKind::Mul => gi * av.data()[lhs_at(i)],
                    };
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Scale(a, s) => {
            accumulate(grads, nodes, *a, g.iter().map(|x| x * s).collect());
        }
        Op::AddScalar(a) => accumulate(grads, nodes, *a, g.to_vec()),
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let (n, k) = (av.rows(), av.cols());
            let m = bv.cols();
            if nodes[*a].requires_grad {
                // dA = dY Bᵀ
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let brow = &bv.data()[kk * m..(kk + 1) * m];
                        ga[i * k + kk] = gi.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                accumulate(grads, nodes, *a, ga);
            }
            if nodes[*b].requires_grad {
                // dB = Aᵀ dY
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let gi = &g[i * m..(i + 1) * m];
                    for kk in 0..k {
                        let aik = av.data()[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        let row = &mut gb[kk * m..(kk + 1) * m];
                        for (r, x) in row.iter_mut().zip(gi) {
                            *r += aik * x;
                        }
                    }
                }
                accumulate(grads, nodes, *b, gb);
            }
        }
        Op::Transpose(a) => {
            let (r, c) = (out.rows(), out.cols());
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[j * r + i] = g[i * c + j];
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Relu(a) => {
            let x = &nodes[*a].value;
            let ga = g
                .iter()
                .zip(x.data())
                .map(|(gi, xi)| if *xi > 0.0 { *gi } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Tanh(a) => {
            let ga = g
                .iter()
                .zip(out.data())
                .map(|(gi, y)| gi * (1.0 - y * y))
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Exp(a) => {
            let ga = g.iter().zip(out.data()).map(|(gi, y)| gi * y).collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Ln(a, eps) => {
            let x = &nodes[*a].value;
            let ga = g
                .iter()
                .zip(x.data())
                .map(|(gi, xi)| gi / (xi + eps))
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Clip(a, lo, hi) => {
            let x = &nodes[*a].value;
            let ga = g
                .iter()
                .zip(x.data())
                .map(|(gi, xi)| if *xi >= *lo && *xi <= *hi { *gi } else { 0.0 })
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Sum(a) => {
            let len = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0]; len]);
        }
        Op::Mean(a) => {
            let len = nodes[*a].value.len();
            accumulate(grads, nodes, *a, vec![g[0] / len as f64; len]);
        }
        Op::MeanRows(a) => {
            let x = &nodes[*a].value;
            let (r, c) = (x.rows(), x.cols());
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    ga[i * c + j] = g[j] / r as f64;
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::L2Normalize(a) => {
            let x = &nodes[*a].value;
            let norm = x.l2_norm();
            if norm <= NORM_FLOOR {
                return;
            }
            let y = out.data();
            let yg: f64 = y.iter().zip(g).map(|(yi, gi)| yi * gi).sum();
            let ga = g
                .iter()
                .zip(y)
                .map(|(gi, yi)| (gi - yi * yg) / norm)
                .collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::Dot(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            accumulate(grads, nodes, *a, bv.data().iter().map(|x| g[0] * x).collect());
            accumulate(grads, nodes, *b, av.data().iter().map(|x| g[0] * x).collect());
        }
        Op::LogSumExp(a) => {
            let x = &nodes[*a].value;
            let lse = out.item();
            let ga = x.data().iter().map(|xi| g[0] * (xi - lse).exp()).collect();
            accumulate(grads, nodes, *a, ga);
        }
        Op::LogSumExpRows(a) => {
            let x = &nodes[*a].value;
            let (r, c) = (x.rows(), x.cols());
            let mut ga = vec![0.0; r * c];
            for i in 0..r {
                let lse = out.data()[i];
                for j in 0..c {
                    ga[i * c + j] = g[i] * (x.data()[i * c + j] - lse).exp();
                }
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Diag(a) => {
            let n = out.len();
            let mut ga = vec![0.0; n * n];
            for i in 0..n {
                ga[i * n + i] = g[i];
            }
            accumulate(grads, nodes, *a, ga);
        }
        Op::Select(a, idx) => {
            let mut ga = vec![0.0; nodes[*a].value.len()];
            ga[*idx] = g[0];
            accumulate(grads, nodes, *a, ga);
        }
        Op::Stack(ids) => {
            let mut offset = 0;
            for id in ids {
                let len = nodes[*id].value.len();
                accumulate(grads, nodes, *id, g[offset..offset + len].to_vec());
                offset += len;
            }
        }
    }
}

/// Result of [`Tape::backward`]: one gradient slot per recorded node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `var`; zeros when no gradient reached it.
    pub fn get(&self, var: Var<'_>) -> Tensor {
        let shape = &self.shapes[var.id];
        match &self.grads[var.id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient matches its node"),
            None => Tensor::zeros(shape),
        }
    }

    /// True when some gradient (possibly zero-valued) flowed into `var`.
    pub fn reached(&self, var: Var<'_>) -> bool {
        self.grads[var.id].is_some()
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|x| f(*x)).collect())
        .expect("map preserves shape")
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Tensor {
        (*self.tape.value_rc(self.id)).clone()
    }

    /// Forward value of a single-element variable.
    pub fn item(&self) -> f64 {
        self.tape.value_rc(self.id).data()[0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_rc(self.id).shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.tape.value_rc(self.id).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn binary(self, other: Var<'t>, kind: BinKind, name: &'static str) -> Result<Var<'t>> {
        let a = self.tape.value_rc(self.id);
        let b = self.tape.value_rc(other.id);
        let bc = if a.shape() == b.shape() {
            Bcast::Same
        } else if b.rank() == 0 {
            Bcast::RhsScalar
        } else if a.rank() == 0 {
            Bcast::LhsScalar
        } else if a.rank() == 2 && b.rank() == 1 && a.cols() == b.len() {
            Bcast::RhsRow
        } else {
            return Err(shape_err(name, &a, &b));
        };
        let out_shape = if bc == Bcast::LhsScalar {
            b.shape().to_vec()
        } else {
            a.shape().to_vec()
        };
        let len: usize = out_shape.iter().product();
        let cols = if out_shape.len() == 2 { out_shape[1] } else { 1 };
        let data = (0..len)
            .map(|i| {
                let (x, y) = match bc {
                    Bcast::Same => (a.data()[i], b.data()[i]),
                    Bcast::RhsScalar => (a.data()[i], b.data()[0]),
                    Bcast::LhsScalar => (a.data()[0], b.data()[i]),
                    Bcast::RhsRow => (a.data()[i], b.data()[i % cols]),
                };
                match kind {
                    BinKind::Add => x + y,
                    BinKind::Sub => x - y,
                    BinKind::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(out_shape, data)?;
        Ok(self
            .tape
            .push(value, Op::Binary(kind, self.id, other.id, bc)))
    }

    /// Elementwise sum. `other` may be a scalar or, for a matrix `self`,
    /// a row vector broadcast over rows.
    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = map(&self.tape.value_rc(self.id), |x| x * s);
        self.tape.push(v, Op::Scale(self.id, s))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_scalar(self, c: f64) -> Var<'t> {
        let v = map(&self.tape.value_rc(self.id), |x| x + c);
        self.tape.push(v, Op::AddScalar(self.id))
    }

    /// `[n, k] x [k, m] -> [n, m]`, or `[k] x [k, m] -> [m]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.tape.value_rc(self.id);
        let b = self.tape.value_rc(other.id);
        if a.rank() == 0 || a.rank() > 2 || b.rank() != 2 || a.cols() != b.rows() {
            return Err(shape_err("matmul", &a, &b));
        }
        let (n, k, m) = (a.rows(), a.cols(), b.cols());
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            let row = &mut data[i * m..(i + 1) * m];
            for kk in 0..k {
                let aik = a.data()[i * k + kk];
                if aik == 0.0 {
                    continue;
                }
                let brow = &b.data()[kk * m..(kk + 1) * m];
                for (r, x) in row.iter_mut().zip(brow) {
                    *r += aik * x;
                }
            }
        }
        let shape = if a.rank() == 1 { vec![m] } else { vec![n, m] };
        let value = Tensor::new(shape, data)?;
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id)))
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        let a = self.tape.value_rc(self.id);
        if a.rank() != 2 {
            return Err(shape_err("transpose", &a, &a));
        }
        let (r, c) = (a.rows(), a.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = a.data()[i * c + j];
            }
        }
        let value = Tensor::matrix(c, r, data)?;
        Ok(self.tape.push(value, Op::Transpose(self.id)))
    }

    pub fn relu(self) -> Var<'t> {
        let x = self.tape.value_rc(self.id);
        self.tape
            .mix_branches(x.data().iter().map(|v| u8::from(*v > 0.0)));
        let v = map(&x, |v| v.max(0.0));
        self.tape.push(v, Op::Relu(self.id))
    }

    pub fn tanh(self) -> Var<'t> {
        let v = map(&self.tape.value_rc(self.id), f64::tanh);
        self.tape.push(v, Op::Tanh(self.id))
    }

    pub fn exp(self) -> Var<'t> {
        let v = map(&self.tape.value_rc(self.id), f64::exp);
        self.tape.push(v, Op::Exp(self.id))
    }

    /// `ln(x + eps)`.
    pub fn ln(self, eps: f64) -> Var<'t> {
        let v = map(&self.tape.value_rc(self.id), |x| (x + eps).ln());
        self.tape.push(v, Op::Ln(self.id, eps))
    }

    /// Clamp to `[lo, hi]`. The gradient is the identity on the closed
    /// interval and zero outside it.
    pub fn clip(self, lo: f64, hi: f64) -> Var<'t> {
        let x = self.tape.value_rc(self.id);
        self.tape.mix_branches(x.data().iter().map(|v| {
            if *v < lo {
                0
            } else if *v > hi {
                2
            } else {
                1
            }
        }));
        let v = map(&x, |v| v.clamp(lo, hi));
        self.tape.push(v, Op::Clip(self.id, lo, hi))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.tape.value_rc(self.id).data().iter().sum();
        self.tape.push(Tensor::scalar(s), Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let x = self.tape.value_rc(self.id);
        let s = x.data().iter().sum::<f64>() / x.len() as f64;
        self.tape.push(Tensor::scalar(s), Op::Mean(self.id))
    }

    /// Column means of a matrix: `[r, c] -> [c]`.
    pub fn mean_rows(self) -> Result<Var<'t>> {
        let x = self.tape.value_rc(self.id);
        if x.rank() != 2 || x.rows() == 0 {
            return Err(shape_err("mean_rows", &x, &x));
        }
        let (r, c) = (x.rows(), x.cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (j, d) in data.iter_mut().enumerate() {
                *d += x.data()[i * c + j];
            }
        }
        for d in &mut data {
            *d /= r as f64;
        }
        Ok(self.tape.push(Tensor::vector(data), Op::MeanRows(self.id)))
    }

    /// Divide by the Euclidean norm over all elements. A (near-)zero input
    /// maps to zeros and passes no gradient.
    pub fn l2_normalize(self) -> Var<'t> {
        let x = self.tape.value_rc(self.id);
        let norm = x.l2_norm();
        let v = if norm <= NORM_FLOOR {
            map(&x, |_| 0.0)
        } else {
            map(&x, |v| v / norm)
        };
        self.tape.push(v, Op::L2Normalize(self.id))
    }

    pub fn dot(self, other: Var<'t>) -> Result<Var<'t>> {
        let a = self.tape.value_rc(self.id);
        let b = self.tape.value_rc(other.id);
        if a.shape() != b.shape() {
            return Err(shape_err("dot", &a, &b));
        }
        let d = a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum();
        Ok(self
            .tape
            .push(Tensor::scalar(d), Op::Dot(self.id, other.id)))
    }

    pub fn cosine_similarity(self, other: Var<'t>) -> Result<Var<'t>> {
        self.l2_normalize().dot(other.l2_normalize())
    }

    /// `log Σ exp(x)` over all elements, shifted by the maximum.
    pub fn logsumexp(self) -> Var<'t> {
        let x = self.tape.value_rc(self.id);
        let v = logsumexp_slice(x.data());
        self.tape.push(Tensor::scalar(v), Op::LogSumExp(self.id))
    }

    /// Row-wise log-sum-exp: `[r, c] -> [r]`.
    pub fn logsumexp_rows(self) -> Result<Var<'t>> {
        let x = self.tape.value_rc(self.id);
        if x.rank() != 2 {
            return Err(shape_err("logsumexp_rows", &x, &x));
        }
        let c = x.cols();
        let data = x.data().chunks(c).map(logsumexp_slice).collect();
        Ok(self
            .tape
            .push(Tensor::vector(data), Op::LogSumExpRows(self.id)))
    }

    pub fn diag(self) -> Result<Var<'t>> {
        let x = self.tape.value_rc(self.id);
        if x.rank() != 2 || x.rows() != x.cols() {
            return Err(shape_err("diag", &x, &x));
        }
        let n = x.rows();
        let data = (0..n).map(|i| x.data()[i * n + i]).collect();
        Ok(self.tape.push(Tensor::vector(data), Op::Diag(self.id)))
    }

    /// Element `index` of the flattened value, as a scalar.
    pub fn select(self, index: usize) -> Result<Var<'t>> {
        let x = self.tape.value_rc(self.id);
        let Some(v) = x.data().get(index) else {
            return Err(AutodiffError::Index {
                index,
                len: x.len(),
            });
        };
        Ok(self
            .tape
            .push(Tensor::scalar(*v), Op::Select(self.id, index)))
    }

    /// Value-equal copy with no path back to `self`.
    pub fn detach(self) -> Result<Var<'t>> {
        let live = self.tape.value_rc(self.id);
        let value = {
            let mut inner = self.tape.inner.borrow_mut();
            match &mut inner.detach {
                DetachLog::Off => (*live).clone(),
                DetachLog::Record(log) => {
                    log.push((*live).clone());
                    (*live).clone()
                }
                DetachLog::Replay { values, cursor } => {
                    let v = values
                        .get(*cursor)
                        .filter(|v| v.shape() == live.shape())
                        .cloned()
                        .ok_or(AutodiffError::ReplayMismatch)?;
                    *cursor += 1;
                    v
                }
            }
        };
        Ok(self.tape.constant(value))
    }
}

/// Stack equally shaped values along a new leading axis. Scalars stack
/// into a vector, vectors into a matrix.
pub fn stack<'t>(vars: &[Var<'t>]) -> Result<Var<'t>> {
    let first = vars.first().ok_or(AutodiffError::EmptyStack)?;
    let tape = first.tape;
    let inner_shape = first.shape();
    let mut data = Vec::with_capacity(vars.len() * first.len());
    for v in vars {
        let x = tape.value_rc(v.id);
        if x.shape() != inner_shape.as_slice() {
            return Err(AutodiffError::Shape {
                op: "stack",
                lhs: inner_shape,
                rhs: x.shape().to_vec(),
            });
        }
        data.extend_from_slice(x.data());
    }
    let mut shape = vec![vars.len()];
    shape.extend(inner_shape);
    let value = Tensor::new(shape, data)?;
    Ok(tape.push(value, Op::Stack(vars.iter().map(|v| v.id).collect())))
}

pub fn logsumexp_slice(x: &[f64]) -> f64 {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
