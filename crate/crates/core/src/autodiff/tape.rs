use std::collections::HashMap;

use super::kernels;
use super::tensor::{Real, Tensor};
use super::AdError;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Relu,
    /// `[x]+ = max(x, 0)`, subgradient 0 at exactly 0.
    HingePos,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

enum Op<T> {
    Leaf,
    Unary(Unary, Var),
    Binary(Binary, Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MulConst(Var, Vec<T>),
    AddConst(Var),
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    LogSoftmax(Var),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    SliceCols(Var, usize),
    Sum(Var),
    NormalizeRows(Var, Vec<T>),
    RowDot(Var, Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Norm floor used by row normalization.
pub const NORM_EPS: f64 = 1e-12;

/// Records executed operations so adjoints can be replayed in reverse.
///
/// A tape is single-owner; build a fresh one per forward pass.
pub struct Tape<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    params: HashMap<u64, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> AdError {
    AdError::ShapeMismatch {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            params: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf that receives a gradient.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Binds a model parameter. Binding the same parameter twice returns the
    /// same handle; frozen tensors are recorded as constants.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        match t.param_id() {
            Some(id) if t.requires_grad() => {
                if let Some(&v) = self.params.get(&id) {
                    return v;
                }
                let mut value = t.clone();
                value.zero_grad();
                let v = self.push(value, Op::Leaf, true);
                self.params.insert(id, v);
                v
            }
            _ => {
                let mut value = t.clone();
                value.zero_grad();
                self.push(value, Op::Leaf, false)
            }
        }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        if kind == Unary::Log {
            if let Some(bad) = xv.data().iter().find(|&&a| a <= T::zero()) {
                return Err(AdError::Domain {
                    op: "log",
                    detail: format!("non-positive operand {bad}"),
                });
            }
        }
        let f: fn(T) -> T = match kind {
            Unary::Sigmoid => kernels::sigmoid,
            Unary::Tanh => |a: T| a.tanh(),
            Unary::Exp => |a: T| a.exp(),
            Unary::Log => |a: T| a.ln(),
            Unary::Relu | Unary::HingePos => |a: T| if a > T::zero() { a } else { T::zero() },
        };
        let data = xv.data().iter().map(|&a| f(a)).collect();
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Unary(kind, x), rg))
    }

    pub fn binary(&mut self, kind: Binary, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(mismatch("elementwise", av.shape(), bv.shape()));
        }
        let f: fn(T, T) -> T = match kind {
            Binary::Add => |x, y| x + y,
            Binary::Sub => |x, y| x - y,
            Binary::Mul => |x, y| x * y,
        };
        let data = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let out = Tensor::new(av.shape(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Binary(kind, a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::Tanh, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::Log, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::Relu, x)
    }

    pub fn hinge_pos(&mut self, x: Var) -> Result<Var, AdError> {
        self.unary(Unary::HingePos, x)
    }

    pub fn scale(&mut self, x: Var, c: T) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&a| a * c).collect())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::Scale(x, c), rg))
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        let out = Tensor::new(xv.shape(), xv.data().iter().map(|&a| a + c).collect())?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddScalar(x), rg))
    }

    /// Elementwise product with a constant array of the same length.
    pub fn mul_const(&mut self, x: Var, c: Vec<T>) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        if c.len() != xv.len() {
            return Err(mismatch("mul_const", xv.shape(), &[c.len()]));
        }
        let data = xv.data().iter().zip(&c).map(|(&a, &b)| a * b).collect();
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::MulConst(x, c), rg))
    }

    /// Adds a constant: either one row broadcast over all rows, or an array
    /// of the same length as `x`.
    pub fn add_const(&mut self, x: Var, c: &[T]) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        if xv.cols() != c.len() && xv.len() != c.len() {
            return Err(mismatch("add_const", xv.shape(), &[c.len()]));
        }
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(c.len()) {
            chunk.iter_mut().zip(c).for_each(|(a, &b)| *a += b);
        }
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::AddConst(x), rg))
    }

    /// Broadcast-adds a bias vector (length = cols of `x`) to each row.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, AdError> {
        let (xv, bv) = (&self.nodes[x.0].value, &self.nodes[bias.0].value);
        if xv.cols() != bv.len() {
            return Err(mismatch("add_row", xv.shape(), bv.shape()));
        }
        let mut data = xv.data().to_vec();
        for chunk in data.chunks_mut(bv.len()) {
            chunk.iter_mut().zip(bv.data()).for_each(|(a, &b)| *a += b);
        }
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddRow(x, bias), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(mismatch("matmul", av.shape(), bv.shape()));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_acc(av.data(), bv.data(), n, k, m, &mut out);
        let out = Tensor::new(&[n, m], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ` for `a: [n, k]`, `b: [m, k]`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[1] {
            return Err(mismatch("matmul_bt", av.shape(), bv.shape()));
        }
        let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[0]);
        let mut out = vec![T::zero(); n * m];
        kernels::matmul_bt_acc(av.data(), bv.data(), n, k, m, &mut out);
        let out = Tensor::new(&[n, m], out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMulBT(a, b), rg))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        let cols = xv.cols();
        let mut data = xv.data().to_vec();
        for row in data.chunks_mut(cols) {
            kernels::log_softmax_in_place(row);
        }
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::LogSoftmax(x), rg))
    }

    /// Stacks rows `ids` of a rank-2 table.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, AdError> {
        let tv = &self.nodes[table.0].value;
        if tv.rank() != 2 {
            return Err(AdError::InvalidShape(tv.shape().to_vec()));
        }
        if ids.is_empty() {
            return Err(AdError::InvalidShape(vec![0]));
        }
        let (rows, cols) = (tv.shape()[0], tv.shape()[1]);
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(AdError::IndexOutOfRange {
                    op: "gather_rows",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::new(&[ids.len(), cols], data)?;
        let rg = self.rg(table);
        Ok(self.push(out, Op::GatherRows(table, ids.to_vec()), rg))
    }

    /// Picks elements by flat index into a rank-1 result.
    pub fn pick(&mut self, x: Var, flat: &[usize]) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        if flat.is_empty() {
            return Err(AdError::InvalidShape(vec![0]));
        }
        let mut data = Vec::with_capacity(flat.len());
        for &i in flat {
            if i >= xv.len() {
                return Err(AdError::IndexOutOfRange {
                    op: "pick",
                    index: i,
                    bound: xv.len(),
                });
            }
            data.push(xv.data()[i]);
        }
        let out = Tensor::vector(data);
        let rg = self.rg(x);
        Ok(self.push(out, Op::Pick(x, flat.to_vec()), rg))
    }

    /// Columns `start..start + width` of a rank-2 tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        if xv.rank() != 2 || start + width > xv.cols() || width == 0 {
            return Err(mismatch("slice_cols", xv.shape(), &[start, width]));
        }
        let (rows, cols) = (xv.shape()[0], xv.cols());
        let mut data = Vec::with_capacity(rows * width);
        for r in 0..rows {
            data.extend_from_slice(&xv.data()[r * cols + start..r * cols + start + width]);
        }
        let out = Tensor::new(&[rows, width], data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols(x, start), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, AdError> {
        let s = self.nodes[x.0].value.data().iter().copied().sum();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Sum(x), rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AdError> {
        let n = self.nodes[x.0].value.len();
        let s = self.sum(x)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    /// Scales each row to unit L2 norm; norms are floored at [`NORM_EPS`].
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var, AdError> {
        let xv = &self.nodes[x.0].value;
        let cols = xv.cols();
        let eps = T::lit(NORM_EPS);
        let mut data = xv.data().to_vec();
        let mut norms = Vec::with_capacity(xv.rows());
        for row in data.chunks_mut(cols) {
            let n = row.iter().map(|&a| a * a).sum::<T>().sqrt().max(eps);
            row.iter_mut().for_each(|a| *a = *a / n);
            norms.push(n);
        }
        let out = Tensor::new(xv.shape(), data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::NormalizeRows(x, norms), rg))
    }

    /// Row-wise dot products: `[n, k] x [n, k] -> [n]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var, AdError> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() {
            return Err(mismatch("row_dot", av.shape(), bv.shape()));
        }
        let cols = av.cols();
        let data = av
            .data()
            .chunks(cols)
            .zip(bv.data().chunks(cols))
            .map(|(x, y)| kernels::dot(x, y))
            .collect();
        let out = Tensor::vector(data);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::RowDot(a, b), rg))
    }

    /// Reverse pass from a single-element loss. Gradients of earlier passes
    /// on this tape are discarded.
    pub fn backward(&mut self, loss: Var) -> Result<(), AdError> {
        let lv = &self.nodes[loss.0].value;
        if lv.len() != 1 {
            return Err(AdError::NonScalarLoss(lv.shape().to_vec()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(dy) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &dy);
            self.grads[i] = Some(dy);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, f: impl FnOnce(&mut [T], &[Node<T>])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let len = self.nodes[v.0].value.len();
        let g = self.grads[v.0].get_or_insert_with(|| vec![T::zero(); len]);
        f(g, &self.nodes);
    }

    fn propagate(&mut self, i: usize, dy: &[T]) {
        // Borrow dance: ops hold copies of small metadata; large values are
        // read through `nodes` inside `acc`.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Unary(kind, x) => {
                let kind = *kind;
                self.acc(*x, |g, nodes| {
                    let xs = nodes[x.0].value.data();
                    let ys = nodes[i].value.data();
                    for j in 0..g.len() {
                        let d = match kind {
                            Unary::Sigmoid => ys[j] * (T::one() - ys[j]),
                            Unary::Tanh => T::one() - ys[j] * ys[j],
                            Unary::Exp => ys[j],
                            Unary::Log => T::one() / xs[j],
                            Unary::Relu | Unary::HingePos => {
                                if xs[j] > T::zero() {
                                    T::one()
                                } else {
                                    T::zero()
                                }
                            }
                        };
                        g[j] += dy[j] * d;
                    }
                });
            }
            Op::Binary(kind, a, b) => {
                let (a, b, kind) = (*a, *b, *kind);
                match kind {
                    Binary::Add => {
                        self.acc(a, |g, _| kernels::axpy(g, T::one(), dy));
                        self.acc(b, |g, _| kernels::axpy(g, T::one(), dy));
                    }
                    Binary::Sub => {
                        self.acc(a, |g, _| kernels::axpy(g, T::one(), dy));
                        self.acc(b, |g, _| kernels::axpy(g, -T::one(), dy));
                    }
                    Binary::Mul => {
                        self.acc(a, |g, nodes| {
                            let bs = nodes[b.0].value.data();
                            g.iter_mut().zip(dy).zip(bs).for_each(|((g, &d), &y)| *g += d * y);
                        });
                        self.acc(b, |g, nodes| {
                            let as_ = nodes[a.0].value.data();
                            g.iter_mut().zip(dy).zip(as_).for_each(|((g, &d), &x)| *g += d * x);
                        });
                    }
                }
            }
            Op::AddRow(x, bias) => {
                self.acc(*x, |g, _| kernels::axpy(g, T::one(), dy));
                self.acc(*bias, |g, _| {
                    for row in dy.chunks(g.len()) {
                        kernels::axpy(g, T::one(), row);
                    }
                });
            }
            Op::Scale(x, c) => {
                let c = *c;
                self.acc(*x, |g, _| kernels::axpy(g, c, dy));
            }
            Op::AddScalar(x) | Op::AddConst(x) => {
                self.acc(*x, |g, _| kernels::axpy(g, T::one(), dy));
            }
            Op::MulConst(x, c) => {
                self.acc(*x, |g, _| {
                    g.iter_mut().zip(dy).zip(c).for_each(|((g, &d), &k)| *g += d * k);
                });
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let (n, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let m = self.nodes[b.0].value.shape()[1];
                // dA = dY · Bᵀ
                self.acc(a, |g, nodes| {
                    kernels::matmul_bt_acc(dy, nodes[b.0].value.data(), n, m, k, g)
                });
                // dB = Aᵀ · dY
                self.acc(b, |g, nodes| {
                    kernels::matmul_at_acc(nodes[a.0].value.data(), dy, n, k, m, g)
                });
            }
            Op::MatMulBT(a, b) => {
                let (a, b) = (*a, *b);
                let (n, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                let m = self.nodes[b.0].value.shape()[0];
                // Y = A·Bᵀ: dA = dY·B, dB = dYᵀ·A
                self.acc(a, |g, nodes| kernels::matmul_acc(dy, nodes[b.0].value.data(), n, m, k, g));
                self.acc(b, |g, nodes| kernels::matmul_at_acc(dy, nodes[a.0].value.data(), n, m, k, g));
            }
            Op::LogSoftmax(x) => {
                self.acc(*x, |g, nodes| {
                    let ys = nodes[i].value.data();
                    let cols = nodes[i].value.cols();
                    for ((gr, dr), yr) in g.chunks_mut(cols).zip(dy.chunks(cols)).zip(ys.chunks(cols)) {
                        let s: T = dr.iter().copied().sum();
                        for j in 0..cols {
                            gr[j] += dr[j] - yr[j].exp() * s;
                        }
                    }
                });
            }
            Op::GatherRows(table, ids) => {
                self.acc(*table, |g, nodes| {
                    let cols = nodes[table.0].value.cols();
                    for (r, &id) in ids.iter().enumerate() {
                        kernels::axpy(&mut g[id * cols..(id + 1) * cols], T::one(), &dy[r * cols..(r + 1) * cols]);
                    }
                });
            }
            Op::Pick(x, flat) => {
                self.acc(*x, |g, _| {
                    for (&j, &d) in flat.iter().zip(dy) {
                        g[j] += d;
                    }
                });
            }
            Op::SliceCols(x, start) => {
                let start = *start;
                self.acc(*x, |g, nodes| {
                    let cols = nodes[x.0].value.cols();
                    let width = nodes[i].value.cols();
                    for (r, dr) in dy.chunks(width).enumerate() {
                        kernels::axpy(&mut g[r * cols + start..r * cols + start + width], T::one(), dr);
                    }
                });
            }
            Op::Sum(x) => {
                let d = dy[0];
                self.acc(*x, |g, _| g.iter_mut().for_each(|a| *a += d));
            }
            Op::NormalizeRows(x, norms) => {
                let eps = T::lit(NORM_EPS);
                self.acc(*x, |g, nodes| {
                    let ys = nodes[i].value.data();
                    let cols = nodes[i].value.cols();
                    for (r, &n) in norms.iter().enumerate() {
                        let (y, d) = (&ys[r * cols..(r + 1) * cols], &dy[r * cols..(r + 1) * cols]);
                        let gr = &mut g[r * cols..(r + 1) * cols];
                        if n > eps {
                            let yd = kernels::dot(y, d);
                            for j in 0..cols {
                                gr[j] += (d[j] - y[j] * yd) / n;
                            }
                        } else {
                            kernels::axpy(gr, T::one() / eps, d);
                        }
                    }
                });
            }
            Op::RowDot(a, b) => {
                let (a, b) = (*a, *b);
                let cols = self.nodes[a.0].value.cols();
                self.acc(a, |g, nodes| {
                    let bs = nodes[b.0].value.data();
                    for (r, &d) in dy.iter().enumerate() {
                        kernels::axpy(&mut g[r * cols..(r + 1) * cols], d, &bs[r * cols..(r + 1) * cols]);
                    }
                });
                self.acc(b, |g, nodes| {
                    let as_ = nodes[a.0].value.data();
                    for (r, &d) in dy.iter().enumerate() {
                        kernels::axpy(&mut g[r * cols..(r + 1) * cols], d, &as_[r * cols..(r + 1) * cols]);
                    }
                });
            }
        }
        self.nodes[i].op = op;
    }

    /// Gradient of the last backward pass with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of a bound parameter into `t.grad`. A parameter that
    /// was bound but not reached receives zeros; an unbound one is untouched.
    pub fn accumulate_into(&self, t: &mut Tensor<T>) -> Result<bool, AdError> {
        let Some(id) = t.param_id() else {
            return Ok(false);
        };
        let Some(&v) = self.params.get(&id) else {
            return Ok(false);
        };
        match self.grad(v) {
            Some(g) => t.accumulate_grad(g)?,
            None => t.accumulate_grad(&vec![T::zero(); t.len()])?,
        }
        Ok(true)
    }
}
