//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive applied to its [`Var`]s in the order
//! the forward pass runs them, so node indices are already a topological
//! order. [`Tape::backward`] walks that order in reverse once and returns a
//! [`Gradients`] map holding `d(loss)/d(node)` for every node that needs it.
//!
//! Shapes must match exactly; the only broadcast is [`Tape::scale`]
//! (scalar × tensor). Row-bias additions and column expansions are
//! composed from matrix products with constant ones vectors.

use super::dense::{kernels, Tensor};
use crate::error::{Error, Result};

/// Lower/upper clamp margin applied to arccos arguments.
pub const ARCCOS_EPS: f64 = 1e-7;

/// Handle to a node recorded on a [`Tape`].
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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    RowNormalize(Var, Vec<f64>),
    ColNormalize(Var, Vec<f64>),
    Frobenius(Var),
    RowNorms(Var),
    Arccos(Var),
    Cos(Var),
    GatherCols(Var, Vec<usize>),
    LogSumExpRows(Var),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    verify: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Tape in verification mode: every input and output is checked for
    /// non-finite entries.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            verify: true,
        }
    }

    /// Tape that skips the per-op finiteness checks.
    pub fn unchecked() -> Self {
        Self {
            nodes: Vec::new(),
            verify: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf. Gradients flow into it when the tensor's
    /// `requires_grad` flag is set.
    pub fn leaf(&mut self, t: &Tensor) -> Result<Var> {
        let mut value = t.clone();
        let requires_grad = value.requires_grad();
        value.zero_grad();
        self.check_finite(&value, "leaf")?;
        Ok(self.push(Op::Leaf, value, requires_grad))
    }

    pub fn param(&mut self, t: &Tensor) -> Result<Var> {
        let mut value = t.clone();
        value.zero_grad();
        self.check_finite(&value, "param")?;
        Ok(self.push(Op::Leaf, value, true))
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.check_finite(&t, "constant")?;
        Ok(self.push(Op::Leaf, t.with_requires_grad(false), false))
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn check_finite(&self, t: &Tensor, what: &str) -> Result<()> {
        if self.verify && !t.is_finite() {
            return Err(Error::Numeric(format!("non-finite value in {what}")));
        }
        Ok(())
    }

    fn record(&mut self, op: Op, value: Tensor, inputs: &[Var], what: &str) -> Result<Var> {
        self.check_finite(&value, what)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        Ok(self.push(op, value, requires_grad))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn matrix(&self, a: Var, what: &str) -> Result<(usize, usize)> {
        let t = self.value(a);
        if !t.is_matrix() {
            return Err(Error::Shape(format!("{what} needs a matrix, got {:?}", t.shape())));
        }
        Ok((t.rows(), t.cols()))
    }

    fn map(&mut self, a: Var, op: Op, what: &str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.record(op, value, &[a], what)
    }

    fn zip(
        &mut self,
        a: Var,
        b: Var,
        op: Op,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let value = Tensor::new(x.shape(), data)?;
        self.record(op, value, &[a, b], what)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(Error::Shape(format!("matmul {m}x{k} by {k2}x{n}")));
        }
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let value = Tensor::matrix(m, n, out)?;
        self.record(Op::MatMul(a, b), value, &[a, b], "matmul")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.matrix(a, "transpose")?;
        let value = self.value(a).transpose();
        self.record(Op::Transpose(a), value, &[a], "transpose")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Add(a, b), "add", |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Sub(a, b), "sub", |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, Op::Mul(a, b), "mul", |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, c), "scale", |x| c * x)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Sigmoid(a), "sigmoid", stable_sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Exp(a), "exp", f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v <= 0.0) {
            return Err(Error::Numeric("ln of a non-positive value".into()));
        }
        self.map(a, Op::Ln(a), "ln", f64::ln)
    }

    pub fn cos(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Cos(a), "cos", f64::cos)
    }

    /// arccos of the argument clipped to `[-1, 1]`. The derivative is
    /// evaluated at the argument clamped to `[-1 + ARCCOS_EPS, 1 - ARCCOS_EPS]`,
    /// which keeps it finite at the endpoints.
    pub fn arccos(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Arccos(a), "arccos", |x| x.clamp(-1.0, 1.0).acos())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.record(Op::Sum(a), Tensor::scalar(s), &[a], "sum")
    }

    /// Each row divided by its L2 norm.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "row_normalize")?;
        let x = self.value(a).data();
        let mut norms = Vec::with_capacity(r);
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n == 0.0 || !n.is_finite() {
                return Err(Error::DegenerateEmbedding { row: i });
            }
            for (o, v) in out[i * c..(i + 1) * c].iter_mut().zip(row) {
                *o = v / n;
            }
            norms.push(n);
        }
        let value = Tensor::matrix(r, c, out)?;
        self.record(Op::RowNormalize(a, norms), value, &[a], "row_normalize")
    }

    /// Each column divided by its L2 norm; columns with norm ≤ 1e-12 are
    /// rejected.
    pub fn col_normalize(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.matrix(a, "col_normalize")?;
        let x = self.value(a).data();
        let mut norms = vec![0.0; c];
        for i in 0..r {
            for j in 0..c {
                norms[j] += x[i * c + j] * x[i * c + j];
            }
        }
        for (j, n) in norms.iter_mut().enumerate() {
            *n = n.sqrt();
            if *n <= 1e-12 || !n.is_finite() {
                return Err(Error::DegenerateColumn { column: j, norm: *n });
            }
        }
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[i * c + j] = x[i * c + j] / norms[j];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        self.record(Op::ColNormalize(a, norms), value, &[a], "col_normalize")
    }

    /// Frobenius norm of the whole tensor (Euclidean norm for vectors).
    /// Its gradient at the origin is taken as zero.
    pub fn frobenius_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).frobenius_norm();
        self.record(Op::Frobenius(a), Tensor::scalar(n), &[a], "frobenius_norm")
    }

    /// Euclidean norm of every row, as an `r×1` column.
    pub fn row_norms(&mut self, a: Var) -> Result<Var> {
        let (r, _) = self.matrix(a, "row_norms")?;
        let x = self.value(a);
        let data = (0..r)
            .map(|i| x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::matrix(r, 1, data)?;
        self.record(Op::RowNorms(a), value, &[a], "row_norms")
    }

    /// Picks `a[i, index[i]]` for every row, as an `r×1` column.
    pub fn gather_cols(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let (r, c) = self.matrix(a, "gather_cols")?;
        if index.len() != r {
            return Err(Error::Shape(format!("gather_cols: {} indices for {r} rows", index.len())));
        }
        if let Some(&bad) = index.iter().find(|&&j| j >= c) {
            return Err(Error::Shape(format!("gather_cols: index {bad} out of {c} columns")));
        }
        let x = self.value(a);
        let data = index.iter().enumerate().map(|(i, &j)| x.get(i, j)).collect();
        let value = Tensor::matrix(r, 1, data)?;
        self.record(Op::GatherCols(a, index.to_vec()), value, &[a], "gather_cols")
    }

    /// Row-wise `log Σ exp`, computed after subtracting the row maximum.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Result<Var> {
        let (r, _) = self.matrix(a, "log_sum_exp_rows")?;
        let x = self.value(a);
        let data = (0..r).map(|i| log_sum_exp(x.row(i))).collect();
        let value = Tensor::matrix(r, 1, data)?;
        self.record(Op::LogSumExpRows(a), value, &[a], "log_sum_exp_rows")
    }

    // Composites.

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// `x (n×m) + 1·b` for a `1×m` row `b`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = self.value(x).rows();
        let ones = self.constant(Tensor::ones(&[n, 1]))?;
        let spread = self.matmul(ones, b)?;
        self.add(x, spread)
    }

    /// Repeats an `r×1` column across `n` columns.
    pub fn broadcast_col(&mut self, v: Var, n: usize) -> Result<Var> {
        let ones = self.constant(Tensor::ones(&[1, n]))?;
        self.matmul(v, ones)
    }

    /// Row sums as an `r×1` column.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let c = self.value(a).cols();
        let ones = self.constant(Tensor::ones(&[c, 1]))?;
        self.matmul(a, ones)
    }

    /// `x·W + b` with an optional `1×out` bias.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row_bias(y, b),
            None => Ok(y),
        }
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::Shape(format!("backward from non-scalar {:?}", lv.shape())));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);
        for k in (0..=loss.0).rev() {
            let Some(g) = grads[k].take() else { continue };
            self.propagate(k, &g, &mut grads)?;
            grads[k] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, k: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[k];
        let y = node.value.data();
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| self.nodes[v.0].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, kk) = (self.value(*a).rows(), self.value(*a).cols());
                let n = self.value(*b).cols();
                if needs(*a) {
                    let mut da = vec![0.0; m * kk];
                    kernels::matmul_nt(g, val(*b), &mut da, m, n, kk);
                    accumulate(grads, *a, da);
                }
                if needs(*b) {
                    let mut db = vec![0.0; kk * n];
                    kernels::matmul_tn(val(*a), g, &mut db, m, kk, n);
                    accumulate(grads, *b, db);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (r, c) = (node.value.rows(), node.value.cols());
                    let gt = Tensor::matrix(r, c, g.to_vec())?.transpose();
                    accumulate(grads, *a, gt.into_data());
                }
            }
            Op::Add(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.to_vec());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    accumulate(grads, *a, g.to_vec());
                }
                if needs(*b) {
                    accumulate(grads, *b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let d = g.iter().zip(val(*b)).map(|(g, y)| g * y).collect();
                    accumulate(grads, *a, d);
                }
                if needs(*b) {
                    let d = g.iter().zip(val(*a)).map(|(g, x)| g * x).collect();
                    accumulate(grads, *b, d);
                }
            }
            Op::Scale(a, c) => {
                accumulate(grads, *a, g.iter().map(|v| c * v).collect());
            }
            Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(y).map(|(g, s)| g * s * (1.0 - s)).collect();
                accumulate(grads, *a, d);
            }
            Op::Exp(a) => {
                let d = g.iter().zip(y).map(|(g, e)| g * e).collect();
                accumulate(grads, *a, d);
            }
            Op::Ln(a) => {
                let d = g.iter().zip(val(*a)).map(|(g, x)| g / x).collect();
                accumulate(grads, *a, d);
            }
            Op::Cos(a) => {
                let d = g.iter().zip(val(*a)).map(|(g, x)| -g * x.sin()).collect();
                accumulate(grads, *a, d);
            }
            Op::Arccos(a) => {
                let d = g
                    .iter()
                    .zip(val(*a))
                    .map(|(g, &x)| {
                        let c = clamp_cos(x);
                        -g / (1.0 - c * c).sqrt()
                    })
                    .collect();
                accumulate(grads, *a, d);
            }
            Op::Sum(a) => {
                accumulate(grads, *a, vec![g[0]; self.value(*a).numel()]);
            }
            Op::RowNormalize(a, norms) => {
                let c = node.value.cols();
                let mut d = vec![0.0; y.len()];
                for (i, n) in norms.iter().enumerate() {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        d[i * c + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::ColNormalize(a, norms) => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let mut dots = vec![0.0; c];
                for i in 0..r {
                    for j in 0..c {
                        dots[j] += y[i * c + j] * g[i * c + j];
                    }
                }
                let mut d = vec![0.0; y.len()];
                for i in 0..r {
                    for j in 0..c {
                        let idx = i * c + j;
                        d[idx] = (g[idx] - y[idx] * dots[j]) / norms[j];
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Frobenius(a) => {
                let n = y[0];
                let d = if n == 0.0 {
                    vec![0.0; self.value(*a).numel()]
                } else {
                    val(*a).iter().map(|x| g[0] * x / n).collect()
                };
                accumulate(grads, *a, d);
            }
            Op::RowNorms(a) => {
                let c = self.value(*a).cols();
                let x = val(*a);
                let mut d = vec![0.0; x.len()];
                for (i, (&n, &gi)) in y.iter().zip(g).enumerate() {
                    if n == 0.0 {
                        continue;
                    }
                    for j in 0..c {
                        d[i * c + j] = gi * x[i * c + j] / n;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::GatherCols(a, index) => {
                let c = self.value(*a).cols();
                let mut d = vec![0.0; self.value(*a).numel()];
                for (i, &j) in index.iter().enumerate() {
                    d[i * c + j] = g[i];
                }
                accumulate(grads, *a, d);
            }
            Op::LogSumExpRows(a) => {
                let c = self.value(*a).cols();
                let x = val(*a);
                let mut d = vec![0.0; x.len()];
                for (i, (&lse, &gi)) in y.iter().zip(g).enumerate() {
                    for j in 0..c {
                        d[i * c + j] = gi * (x[i * c + j] - lse).exp();
                    }
                }
                accumulate(grads, *a, d);
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contribution: Vec<f64>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&contribution).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(contribution),
    }
}

fn clamp_cos(x: f64) -> f64 {
    x.clamp(-1.0 + ARCCOS_EPS, 1.0 - ARCCOS_EPS)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log Σ exp(xs)` with max subtraction.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Result of [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn get_or_zeros(&self, tape: &Tape, v: Var) -> Vec<f64> {
        self.get(v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; tape.value(v).numel()])
    }

    /// Adds the gradient of `v` into the tensor's grad slot.
    pub fn accumulate_into(&self, v: Var, t: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => t.accumulate_grad(g),
            None => t.accumulate_grad(&vec![0.0; t.numel()]),
        }
    }
}
