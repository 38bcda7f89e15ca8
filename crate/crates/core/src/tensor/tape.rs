use std::cell::RefCell;

use super::kernels::{self, dot, gemm_nn, gemm_nt, gemm_tn};
use super::params::{ParamGrads, ParamKey};
use super::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf(Option<ParamKey>),
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    Shift(usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceCols { input: usize, start: usize },
    GatherRows { input: usize, rows: Vec<usize> },
    Reshape(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Clamp { input: usize, lo: T, hi: T },
    Sum(usize),
    MeanRows(usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Records operations as they run; `backward` replays them in reverse.
///
/// A tape is single-threaded. Nodes are appended in execution order, so
/// every node's inputs precede it.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::with_capacity(256)),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Tensor<T> {
        self.nodes.borrow()[id].value.clone()
    }

    /// A value that receives no gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf(None))
    }

    /// A differentiable input not tied to a parameter table.
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf(None))
    }

    /// A leaf whose gradient is reported under `key`.
    pub fn param(&self, key: ParamKey, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf(Some(key)))
    }

    pub fn concat_cols(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let first = parts.first().ok_or(Error::Empty("concat_cols"))?;
        let rows = first.value().dims2().0;
        let mut cols = 0;
        for p in parts {
            let (r, c) = p.value().dims2();
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
            cols += c;
        }
        let mut out = Vec::with_capacity(rows * cols);
        let values: Vec<Tensor<T>> = parts.iter().map(|p| p.value()).collect();
        for r in 0..rows {
            for v in &values {
                out.extend_from_slice(v.row_slice(r));
            }
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatCols(ids)))
    }

    pub fn concat_rows(&self, parts: &[Var<'_, T>]) -> Result<Var<'_, T>> {
        let first = parts.first().ok_or(Error::Empty("concat_rows"))?;
        let cols = first.value().dims2().1;
        let mut rows = 0;
        let mut out = Vec::new();
        for p in parts {
            let v = p.value();
            let (r, c) = v.dims2();
            if c != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: first.shape(),
                    rhs: p.shape(),
                });
            }
            rows += r;
            out.extend_from_slice(v.data());
        }
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(self.push(Tensor::matrix(rows, cols, out)?, Op::ConcatRows(ids)))
    }

    /// Reverse pass from a scalar `loss` recorded on this tape.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Tape("backward: loss was not recorded on this tape".into()));
        }
        let nodes = self.nodes.borrow();
        if !nodes[loss.id].value.is_scalar() {
            return Err(Error::Tape(format!(
                "backward: loss must be scalar, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<Option<Vec<T>>> = vec![None; loss.id + 1];
        let mut params = ParamGrads::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf(key) => {
                    if let Some(key) = key {
                        let t = Tensor::new(node.value.shape().to_vec(), g.clone())?;
                        params.accumulate(*key, &t);
                    }
                    leaf_grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = av.dims2();
                    let n = bv.dims2().1;
                    // dA = dC * B^T ; dB = A^T * dC
                    let ga = slot(&mut grads, *a, m * k);
                    gemm_nt(&g, bv.data(), ga, m, n, k);
                    let gb = slot(&mut grads, *b, k * n);
                    gemm_tn(av.data(), &g, gb, m, k, n);
                }
                Op::MatMulT(a, b) => {
                    let av = &nodes[*a].value;
                    let bv = &nodes[*b].value;
                    let (m, k) = av.dims2();
                    let n = bv.dims2().0;
                    // C = A B^T ; dA = dC * B ; dB = dC^T * A
                    let ga = slot(&mut grads, *a, m * k);
                    gemm_nn(&g, bv.data(), ga, m, n, k);
                    let gb = slot(&mut grads, *b, n * k);
                    gemm_tn(&g, av.data(), gb, m, n, k);
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    let gb = slot(&mut grads, *b, g.len());
                    for (o, &x) in gb.iter_mut().zip(&g) {
                        *o -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &y) in ga.iter_mut().zip(&g).zip(bv) {
                        *o += x * y;
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for ((o, &x), &y) in gb.iter_mut().zip(&g).zip(av) {
                        *o += x * y;
                    }
                }
                Op::AddRow(a, bias) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    let n = nodes[*bias].value.len();
                    let gb = slot(&mut grads, *bias, n);
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                }
                Op::Scale(a, c) => {
                    let ga = slot(&mut grads, *a, g.len());
                    for (o, &x) in ga.iter_mut().zip(&g) {
                        *o += x * *c;
                    }
                }
                Op::Shift(a) | Op::Reshape(a) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                }
                Op::ConcatCols(ids) => {
                    let (rows, cols) = node.value.dims2();
                    let mut offset = 0;
                    for &pid in ids {
                        let pc = nodes[pid].value.dims2().1;
                        let gp = slot(&mut grads, pid, rows * pc);
                        for r in 0..rows {
                            add_into(
                                &mut gp[r * pc..(r + 1) * pc],
                                &g[r * cols + offset..r * cols + offset + pc],
                            );
                        }
                        offset += pc;
                    }
                }
                Op::ConcatRows(ids) => {
                    let mut offset = 0;
                    for &pid in ids {
                        let n = nodes[pid].value.len();
                        add_into(slot(&mut grads, pid, n), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::SliceCols { input, start } => {
                    let (rows, in_cols) = nodes[*input].value.dims2();
                    let out_cols = node.value.dims2().1;
                    let gi = slot(&mut grads, *input, rows * in_cols);
                    for r in 0..rows {
                        add_into(
                            &mut gi[r * in_cols + start..r * in_cols + start + out_cols],
                            &g[r * out_cols..(r + 1) * out_cols],
                        );
                    }
                }
                Op::GatherRows { input, rows } => {
                    let (in_rows, cols) = nodes[*input].value.dims2();
                    let gi = slot(&mut grads, *input, in_rows * cols);
                    for (i, &r) in rows.iter().enumerate() {
                        add_into(&mut gi[r * cols..(r + 1) * cols], &g[i * cols..(i + 1) * cols]);
                    }
                }
                Op::Relu(a) => {
                    let av = nodes[*a].value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(av) {
                        // subgradient at 0 is 0
                        if v > T::zero() {
                            *o += x;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &s) in ga.iter_mut().zip(&g).zip(y) {
                        *o += x * s * (T::one() - s);
                    }
                }
                Op::Tanh(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &t) in ga.iter_mut().zip(&g).zip(y) {
                        *o += x * (T::one() - t * t);
                    }
                }
                Op::Exp(a) => {
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &e) in ga.iter_mut().zip(&g).zip(y) {
                        *o += x * e;
                    }
                }
                Op::Ln(a) => {
                    let av = nodes[*a].value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(av) {
                        *o += x / v;
                    }
                }
                Op::Softmax(a) => {
                    let (rows, cols) = node.value.dims2();
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let inner = dot(yr, gr);
                        for c in 0..cols {
                            ga[r * cols + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let (rows, cols) = node.value.dims2();
                    let y = node.value.data();
                    let ga = slot(&mut grads, *a, g.len());
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let total: T = gr.iter().copied().sum();
                        for c in 0..cols {
                            ga[r * cols + c] += gr[c] - y[r * cols + c].exp() * total;
                        }
                    }
                }
                Op::Clamp { input, lo, hi } => {
                    let av = nodes[*input].value.data();
                    let ga = slot(&mut grads, *input, g.len());
                    for ((o, &x), &v) in ga.iter_mut().zip(&g).zip(av) {
                        if v >= *lo && v <= *hi {
                            *o += x;
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = nodes[*a].value.len();
                    let ga = slot(&mut grads, *a, n);
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
                Op::MeanRows(a) => {
                    let (rows, cols) = nodes[*a].value.dims2();
                    let inv = T::one() / T::lit(rows as f64);
                    let ga = slot(&mut grads, *a, rows * cols);
                    for r in 0..rows {
                        for c in 0..cols {
                            ga[r * cols + c] += g[c] * inv;
                        }
                    }
                }
            }
        }
        Ok(Gradients {
            leaves: leaf_grads,
            params,
        })
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut [T] {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Result of a backward pass.
pub struct Gradients<T> {
    leaves: Vec<Option<Vec<T>>>,
    params: ParamGrads<T>,
}

impl<T: Real> Gradients<T> {
    /// Gradient with respect to a leaf; zeros if the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        let shape = var.shape();
        match self.leaves.get(var.id).and_then(|g| g.as_ref()) {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches leaf shape"),
            None => Tensor::zeros(&shape),
        }
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.item()
    }

    fn same_shape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        let (a, b) = (self.shape(), other.shape());
        if a != b {
            return Err(Error::Shape { op, lhs: a, rhs: b });
        }
        Ok(())
    }

    fn check_tape(&self, other: &Var<'t, T>, op: &'static str) -> Result<()> {
        if !std::ptr::eq(self.tape, other.tape) {
            return Err(Error::Tape(format!("{op}: operands live on different tapes")));
        }
        Ok(())
    }

    fn unary(&self, op: Op<T>, f: impl Fn(T) -> T) -> Var<'t, T> {
        let v = self.value().map(f);
        self.tape.push(v, op)
    }

    fn binary(
        &self,
        other: &Var<'t, T>,
        name: &'static str,
        op: Op<T>,
        f: impl Fn(T, T) -> T,
    ) -> Result<Var<'t, T>> {
        self.check_tape(other, name)?;
        self.same_shape(other, name)?;
        let (a, b) = (self.value(), other.value());
        let out: Vec<T> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(self.tape.push(Tensor::new(a.shape().to_vec(), out)?, op))
    }

    /// `self[m x k] * other[k x n]`
    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(other, "matmul")?;
        let (a, b) = (self.value(), other.value());
        let ((m, k), (k2, n)) = (a.dims2(), b.dims2());
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nn(a.data(), b.data(), &mut out, m, k, n);
        Ok(self
            .tape
            .push(Tensor::matrix(m, n, out)?, Op::MatMul(self.id, other.id)))
    }

    /// `self[m x k] * other[n x k]^T`, the shape used by `[out x in]` weights.
    pub fn matmul_t(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(other, "matmul_t")?;
        let (a, b) = (self.value(), other.value());
        let ((m, k), (n, k2)) = (a.dims2(), b.dims2());
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul_t",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = vec![T::zero(); m * n];
        gemm_nt(a.data(), b.data(), &mut out, m, k, n);
        Ok(self
            .tape
            .push(Tensor::matrix(m, n, out)?, Op::MatMulT(self.id, other.id)))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "add", Op::Add(self.id, other.id), |x, y| x + y)
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "sub", Op::Sub(self.id, other.id), |x, y| x - y)
    }

    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.binary(other, "mul", Op::Mul(self.id, other.id), |x, y| x * y)
    }

    /// Adds a bias vector to every row.
    pub fn add_row(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.check_tape(bias, "add_row")?;
        let (a, b) = (self.value(), bias.value());
        let (_, cols) = a.dims2();
        if b.len() != cols || b.dims2().0 != 1 {
            return Err(Error::Shape {
                op: "add_row",
                lhs: a.shape().to_vec(),
                rhs: b.shape().to_vec(),
            });
        }
        let mut out = a.data().to_vec();
        for row in out.chunks_mut(cols) {
            add_into(row, b.data());
        }
        Ok(self.tape.push(
            Tensor::new(a.shape().to_vec(), out)?,
            Op::AddRow(self.id, bias.id),
        ))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        self.unary(Op::Scale(self.id, c), |x| x * c)
    }

    pub fn add_scalar(&self, c: T) -> Var<'t, T> {
        self.unary(Op::Shift(self.id), |x| x + c)
    }

    pub fn neg(&self) -> Var<'t, T> {
        self.scale(-T::one())
    }

    /// Columns `[start, start + len)` of every row.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let v = self.value();
        let (rows, cols) = v.dims2();
        if len == 0 || start + len > cols {
            return Err(Error::Shape {
                op: "slice_cols",
                lhs: v.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&v.row_slice(r)[start..start + len]);
        }
        Ok(self.tape.push(
            Tensor::matrix(rows, len, out)?,
            Op::SliceCols {
                input: self.id,
                start,
            },
        ))
    }

    /// Selects rows by index (embedding lookup, table lookup, row pick).
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value();
        let (n_rows, cols) = v.dims2();
        if rows.is_empty() {
            return Err(Error::Empty("gather_rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::Shape {
                op: "gather_rows",
                lhs: v.shape().to_vec(),
                rhs: vec![bad],
            });
        }
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            out.extend_from_slice(v.row_slice(r));
        }
        Ok(self.tape.push(
            Tensor::matrix(rows.len(), cols, out)?,
            Op::GatherRows {
                input: self.id,
                rows: rows.to_vec(),
            },
        ))
    }

    pub fn row(&self, r: usize) -> Result<Var<'t, T>> {
        self.gather_rows(&[r])
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let v = self.value().reshape(shape.to_vec())?;
        Ok(self.tape.push(v, Op::Reshape(self.id)))
    }

    pub fn relu(&self) -> Var<'t, T> {
        self.unary(Op::Relu(self.id), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn sigmoid(&self) -> Var<'t, T> {
        self.unary(Op::Sigmoid(self.id), kernels::sigmoid)
    }

    pub fn tanh(&self) -> Var<'t, T> {
        self.unary(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn exp(&self) -> Var<'t, T> {
        self.unary(Op::Exp(self.id), |x| x.exp())
    }

    pub fn ln(&self) -> Var<'t, T> {
        self.unary(Op::Ln(self.id), |x| x.ln())
    }

    pub fn clamp(&self, lo: T, hi: T) -> Var<'t, T> {
        self.unary(Op::Clamp { input: self.id, lo, hi }, |x| x.max(lo).min(hi))
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Var<'t, T> {
        let v = self.value();
        let out = super::softmax_rows(&v);
        self.tape.push(out, Op::Softmax(self.id))
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&self) -> Var<'t, T> {
        let v = self.value();
        let (rows, cols) = v.dims2();
        let mut out = vec![T::zero(); v.len()];
        for r in 0..rows {
            kernels::log_softmax_into(v.row_slice(r), &mut out[r * cols..(r + 1) * cols]);
        }
        let t = Tensor::new(v.shape().to_vec(), out).expect("same shape");
        self.tape.push(t, Op::LogSoftmax(self.id))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&self) -> Var<'t, T> {
        let total = self.value().sum();
        self.tape.push(Tensor::scalar(total), Op::Sum(self.id))
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = T::lit(self.value().len() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Column means, `[m x n] -> [1 x n]`.
    pub fn mean_rows(&self) -> Var<'t, T> {
        let v = self.value();
        let (rows, cols) = v.dims2();
        let inv = T::one() / T::lit(rows as f64);
        let mut out = vec![T::zero(); cols];
        for r in 0..rows {
            add_into(&mut out, v.row_slice(r));
        }
        for o in &mut out {
            *o *= inv;
        }
        self.tape.push(Tensor::row(out), Op::MeanRows(self.id))
    }

    /// Inner product of two equally shaped tensors.
    pub fn dot(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        Ok(self.mul(other)?.sum())
    }

    pub fn backward(&self) -> Result<Gradients<T>> {
        self.tape.backward(*self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_examples() {
        let tape = Tape::<f64>::new();
        let s = tape.input(Tensor::row(vec![0.0, 0.0])).softmax().value();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = tape
            .input(Tensor::row(vec![0.0, 3f64.ln()]))
            .softmax()
            .value();
        assert!(close(s.data()[0], 0.25, 1e-12) && close(s.data()[1], 0.75, 1e-12));
        let s = tape.input(Tensor::row(vec![1000.0, 1000.0])).softmax().value();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s32 = Tape::<f32>::new();
        let s = s32.input(Tensor::row(vec![1000.0f32, 1000.0])).softmax().value();
        assert_eq!(s.data(), &[0.5, 0.5]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row(vec![1.0, 2.0]));
        let loss = x.mul(&x).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_local_gradient_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row(vec![0.0]));
        let y = x.sigmoid().sum();
        assert_eq!(y.item(), 0.5);
        assert_eq!(y.backward().unwrap().wrt(x).data(), &[0.25]);
    }

    #[test]
    fn relu_subgradient_at_zero_is_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row(vec![-1.0, 0.0, 2.0]));
        let g = x.relu().sum().backward().unwrap();
        assert_eq!(g.wrt(x).data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.input(Tensor::row(vec![1.0, 2.0]));
        let b = tape.input(Tensor::row(vec![1.0, 2.0, 3.0]));
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[1, 2]") && err.contains("[1, 3]"), "{err}");
        let err = a.matmul(&b).unwrap_err().to_string();
        assert!(err.contains("matmul"), "{err}");
    }

    #[test]
    fn backward_rejects_non_scalar_and_foreign_loss() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::row(vec![1.0, 2.0]));
        assert!(tape.backward(x).is_err());
        let other = Tape::<f64>::new();
        let y = other.input(Tensor::scalar(1.0));
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn param_leaves_accumulate_under_one_key() {
        use crate::tensor::Group;
        let tape = Tape::<f64>::new();
        let key = ParamKey {
            group: Group::Free,
            index: 0,
        };
        let w = Tensor::row(vec![3.0]);
        let a = tape.param(key, w.clone());
        let b = tape.param(key, w);
        let loss = a.mul(&b).unwrap().sum();
        let g = loss.backward().unwrap();
        assert_eq!(g.params().get(key).unwrap().data(), &[6.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let tape = Tape::<f64>::new();
        let a = tape.input(Tensor::matrix(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let b = tape.input(Tensor::matrix(3, 2, vec![1., 0., 0., 1., 1., 1.]).unwrap());
        let bt = tape.input(Tensor::matrix(2, 3, vec![1., 0., 1., 0., 1., 1.]).unwrap());
        let c1 = a.matmul(&b).unwrap().value();
        let c2 = a.matmul_t(&bt).unwrap().value();
        assert_eq!(c1.data(), &[4., 5., 10., 11.]);
        assert_eq!(c1, c2);
    }
}
