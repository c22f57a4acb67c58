//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Tape`] records every primitive in execution order; node ids are
//! therefore already a topological order and [`Tape::backward`] simply walks
//! the list in reverse. Composite functions (log-softmax cross entropy, KL,
//! cosine similarity) are built from these primitives so that each backward
//! rule is checked once by the gradcheck suite.

use crate::error::{shape_err, Error, Result};
use crate::grad::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a leaf stands for. Only affects bookkeeping; every leaf receives a gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LeafKind {
    Param,
    Input,
    Constant,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf(LeafKind),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    LogSech2(Var),
    Square(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    TileRows(Var, usize),
    SumBlocks(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
    Margin(Var, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only record of a computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; nodes the loss does not depend on get zeros.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn is_reachable(&self, v: Var) -> bool {
        self.grads[v.0].is_some()
    }
}

fn rows_cols(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln(1 - tanh(u)^2)` evaluated without cancellation for large `|u|`.
pub(crate) fn log_sech2(u: f64) -> f64 {
    let a = u.abs();
    2.0 * (std::f64::consts::LN_2 - a - (-2.0 * a).exp().ln_1p())
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<Var> {
        value.ensure_finite(name)?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, kind: LeafKind) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf(kind),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Param)
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Input)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, LeafKind::Constant)
    }

    pub fn leaf_kind(&self, v: Var) -> Option<LeafKind> {
        match self.nodes[v.0].op {
            Op::Leaf(k) => Some(k),
            _ => None,
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return shape_err(op, format!("{sa:?} vs {sb:?}"));
        }
        Ok(())
    }

    fn unary(&mut self, a: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        let out = self.value(a).map(f);
        self.push(out, op, name)
    }

    /// `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let ((n, k), (k2, m)) = (rows_cols(av), rows_cols(bv));
        if av.ndim() != 2 || bv.ndim() != 2 || k != k2 {
            return shape_err("matmul", format!("{:?} x {:?}", av.shape(), bv.shape()));
        }
        let out = matmul_raw(av.data(), bv.data(), n, k, m);
        let t = Tensor::new(vec![n, m], out)?;
        self.push(t, Op::MatMul(a, b), "matmul")
    }

    /// Adds a `[m]` bias to every row of an `[n, m]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        let m = av.cols();
        if av.ndim() != 2 || bv.len() != m {
            return shape_err("add_bias", format!("{:?} + {:?}", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(a, bias), "add_bias")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.value(a).add(self.value(b))?;
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.value(a).sub(self.value(b))?;
        self.push(out, Op::Sub(a, b), "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a, s), "scale", |x| x * s)
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a), "add_scalar", |x| x + s)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a), "relu", |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Tanh(a), "tanh", f64::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a), "exp", f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Log(a), "log", f64::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Softplus(a), "softplus", softplus)
    }

    /// Elementwise `ln(1 - tanh(a)^2)`.
    pub fn log_sech2(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::LogSech2(a), "log_sech2", log_sech2)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Square(a), "square", |x| x * x)
    }

    pub fn pow(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, Op::Pow(a, p), "pow", |x| x.powf(p))
    }

    /// Elementwise clamp; the gradient passes only where `lo <= a <= hi`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(a, Op::Clamp(a, lo, hi), "clamp", |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let s = v.sum() / v.len().max(1) as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), "mean")
    }

    /// Sums each row of a matrix: `[n, m] -> [n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        let out: Vec<f64> = (0..v.rows()).map(|i| v.row(i).iter().sum()).collect();
        let t = Tensor::vector(&out);
        self.push(t, Op::SumRows(a), "sum_rows")
    }

    /// Stacks `k` copies of `a` along the leading axis: row `s * n + i` is row `i` of copy `s`.
    pub fn tile_rows(&mut self, a: Var, k: usize) -> Result<Var> {
        if k == 0 {
            return shape_err("tile_rows", "k must be positive");
        }
        let v = self.value(a);
        let mut data = Vec::with_capacity(v.len() * k);
        for _ in 0..k {
            data.extend_from_slice(v.data());
        }
        let mut shape = v.shape().to_vec();
        if shape.is_empty() {
            shape = vec![k];
        } else {
            shape[0] *= k;
        }
        let t = Tensor::new(shape, data)?;
        self.push(t, Op::TileRows(a, k), "tile_rows")
    }

    /// Adjoint of [`Tape::tile_rows`]: sums the `k` leading-axis blocks.
    pub fn sum_blocks(&mut self, a: Var, k: usize) -> Result<Var> {
        let v = self.value(a);
        let lead = if v.ndim() == 0 { 1 } else { v.shape()[0] };
        if k == 0 || lead % k != 0 {
            return shape_err("sum_blocks", format!("{:?} into {k} blocks", v.shape()));
        }
        let block = v.len() / k;
        let mut out = vec![0.0; block];
        for s in 0..k {
            for (o, x) in out.iter_mut().zip(&v.data()[s * block..(s + 1) * block]) {
                *o += x;
            }
        }
        let mut shape = v.shape().to_vec();
        shape[0] /= k;
        let t = Tensor::new(shape, out)?;
        self.push(t, Op::SumBlocks(a, k), "sum_blocks")
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        if tensors.iter().any(|t| t.ndim() != 2) {
            return shape_err("concat_cols", "operands must be matrices");
        }
        let t = Tensor::concat_cols(&tensors)?;
        self.push(t, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let v = self.value(a);
        if v.ndim() != 2 || start >= end || end > v.cols() {
            return shape_err("slice_cols", format!("{:?}[:, {start}..{end}]", v.shape()));
        }
        let mut data = Vec::with_capacity(v.rows() * (end - start));
        for i in 0..v.rows() {
            data.extend_from_slice(&v.row(i)[start..end]);
        }
        let t = Tensor::new(vec![v.rows(), end - start], data)?;
        self.push(t, Op::SliceCols(a, start, end), "slice_cols")
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a);
        if v.ndim() != 2 {
            return shape_err(
                "log_softmax",
                format!("expected matrix, got {:?}", v.shape()),
            );
        }
        let mut out = v.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a), "log_softmax")
    }

    /// `out[i] = a[i, idx[i]]`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let v = self.value(a);
        check_labels("pick", v, idx)?;
        let out: Vec<f64> = idx.iter().enumerate().map(|(i, &j)| v.row(i)[j]).collect();
        let t = Tensor::vector(&out);
        self.push(t, Op::Pick(a, idx.to_vec()), "pick")
    }

    /// Untargeted margin `max_{j != y} z_j - z_y` per row.
    pub fn margin(&mut self, a: Var, labels: &[usize]) -> Result<Var> {
        let v = self.value(a);
        check_labels("margin", v, labels)?;
        if v.cols() < 2 {
            return shape_err("margin", "needs at least two classes");
        }
        let out: Vec<f64> = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                let row = v.row(i);
                let other = best_other(row, y);
                row[other] - row[y]
            })
            .collect();
        let t = Tensor::vector(&out);
        self.push(t, Op::Margin(a, labels.to_vec()), "margin")
    }

    /// Per-row softmax cross entropy `-log softmax(z)[y]`, shape `[n]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let ls = self.log_softmax(logits)?;
        let p = self.pick(ls, labels)?;
        self.neg(p)
    }

    /// Per-row `KL(softmax(p) || softmax(q))`, shape `[n]`.
    pub fn kl_div(&mut self, p_logits: Var, q_logits: Var) -> Result<Var> {
        self.same_shape("kl_div", p_logits, q_logits)?;
        let lp = self.log_softmax(p_logits)?;
        let lq = self.log_softmax(q_logits)?;
        let pp = self.exp(lp)?;
        let diff = self.sub(lp, lq)?;
        let prod = self.mul(pp, diff)?;
        self.sum_rows(prod)
    }

    /// Per-row cosine similarity of two equally shaped matrices.
    pub fn cosine_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("cosine_rows", a, b)?;
        let ab = self.mul(a, b)?;
        let dot = self.sum_rows(ab)?;
        let a2 = self.square(a)?;
        let na = self.sum_rows(a2)?;
        let b2 = self.square(b)?;
        let nb = self.sum_rows(b2)?;
        let prod = self.mul(na, nb)?;
        let prod = self.add_scalar(prod, 1e-24)?;
        let inv = self.pow(prod, -0.5)?;
        self.mul(dot, inv)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            g.ensure_finite("backward")?;
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let out = &node.value;
        match &node.op {
            Op::Leaf(_) => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ((n, k), m) = (rows_cols(av), bv.cols());
                // dA = G B^T, dB = A^T G
                let mut ga = vec![0.0; n * k];
                for i in 0..n {
                    let grow = &g.data()[i * m..(i + 1) * m];
                    for p in 0..k {
                        let brow = &bv.data()[p * m..(p + 1) * m];
                        ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    }
                }
                let mut gb = vec![0.0; k * m];
                for i in 0..n {
                    let grow = &g.data()[i * m..(i + 1) * m];
                    for p in 0..k {
                        let aip = av.data()[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (o, x) in gb[p * m..(p + 1) * m].iter_mut().zip(grow) {
                            *o += aip * x;
                        }
                    }
                }
                accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
                accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::AddBias(a, b) => {
                let bv = self.value(*b);
                let mut gb = vec![0.0; bv.len()];
                for i in 0..g.rows() {
                    for (o, x) in gb.iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, Tensor::new(bv.shape().to_vec(), gb)?);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, g.zip_map(bv, |x, y| x * y)?);
                accumulate(grads, *b, g.zip_map(av, |x, y| x * y)?);
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let av = self.value(*a);
                accumulate(
                    grads,
                    *a,
                    g.zip_map(av, |x, v| if v > 0.0 { x } else { 0.0 })?,
                );
            }
            Op::Tanh(a) => accumulate(grads, *a, g.zip_map(out, |x, y| x * (1.0 - y * y))?),
            Op::Exp(a) => accumulate(grads, *a, g.zip_map(out, |x, y| x * y)?),
            Op::Log(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, g.zip_map(av, |x, v| x / v)?);
            }
            Op::Softplus(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, g.zip_map(av, |x, v| x * sigmoid(v))?);
            }
            Op::LogSech2(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, g.zip_map(av, |x, v| -2.0 * x * v.tanh())?);
            }
            Op::Square(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, g.zip_map(av, |x, v| 2.0 * x * v)?);
            }
            Op::Pow(a, p) => {
                let av = self.value(*a);
                accumulate(grads, *a, g.zip_map(av, |x, v| x * p * v.powf(p - 1.0))?);
            }
            Op::Clamp(a, lo, hi) => {
                let av = self.value(*a);
                let (lo, hi) = (*lo, *hi);
                accumulate(
                    grads,
                    *a,
                    g.zip_map(av, |x, v| if v >= lo && v <= hi { x } else { 0.0 })?,
                );
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                accumulate(grads, *a, Tensor::full(av.shape(), g.item()));
            }
            Op::Mean(a) => {
                let av = self.value(*a);
                let s = g.item() / av.len().max(1) as f64;
                accumulate(grads, *a, Tensor::full(av.shape(), s));
            }
            Op::SumRows(a) => {
                let av = self.value(*a);
                let c = av.cols();
                let mut ga = Vec::with_capacity(av.len());
                for i in 0..av.rows() {
                    ga.extend(std::iter::repeat_n(g.data()[i], c));
                }
                accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
            }
            Op::TileRows(a, k) => {
                let av = self.value(*a);
                let block = av.len();
                let mut ga = vec![0.0; block];
                for s in 0..*k {
                    for (o, x) in ga.iter_mut().zip(&g.data()[s * block..(s + 1) * block]) {
                        *o += x;
                    }
                }
                accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
            }
            Op::SumBlocks(a, k) => {
                let av = self.value(*a);
                let mut ga = Vec::with_capacity(av.len());
                for _ in 0..*k {
                    ga.extend_from_slice(g.data());
                }
                accumulate(grads, *a, Tensor::new(av.shape().to_vec(), ga)?);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut gp = Vec::with_capacity(pv.len());
                    for i in 0..g.rows() {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    accumulate(grads, p, Tensor::new(pv.shape().to_vec(), gp)?);
                    offset += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for i in 0..av.rows() {
                    ga.row_mut(i)[*start..*end].copy_from_slice(g.row(i));
                }
                accumulate(grads, *a, ga);
            }
            Op::LogSoftmax(a) => {
                // d/dz = g - softmax(z) * sum(g)
                let mut ga = g.clone();
                for i in 0..g.rows() {
                    let s: f64 = g.row(i).iter().sum();
                    for (o, ls) in ga.row_mut(i).iter_mut().zip(out.row(i)) {
                        *o -= ls.exp() * s;
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::Pick(a, idx) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (i, &j) in idx.iter().enumerate() {
                    ga.row_mut(i)[j] = g.data()[i];
                }
                accumulate(grads, *a, ga);
            }
            Op::Margin(a, labels) => {
                let av = self.value(*a);
                let mut ga = Tensor::zeros(av.shape());
                for (i, &y) in labels.iter().enumerate() {
                    let other = best_other(av.row(i), y);
                    let row = ga.row_mut(i);
                    row[other] += g.data()[i];
                    row[y] -= g.data()[i];
                }
                accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}

fn check_labels(op: &'static str, v: &Tensor, idx: &[usize]) -> Result<()> {
    if v.ndim() != 2 || v.rows() != idx.len() {
        return shape_err(op, format!("{:?} with {} labels", v.shape(), idx.len()));
    }
    if let Some(&bad) = idx.iter().find(|&&j| j >= v.cols()) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: v.cols(),
        });
    }
    Ok(())
}

fn best_other(row: &[f64], y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in row.iter().enumerate() {
        if j != y && (best == usize::MAX || v > row[best]) {
            best = j;
        }
    }
    best
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, x) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let orow = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            for (o, x) in orow.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * x;
            }
        }
    }
    out
}
