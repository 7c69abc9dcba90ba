//! Reverse-mode differentiation over a per-forward-pass graph.
//!
//! A [`Graph`] is built while evaluating a forward pass: every primitive
//! appends a node holding its value and the indices of its parents, so the
//! node list is topologically ordered by construction. [`Graph::backward`]
//! walks it once in reverse. Graphs are meant to be dropped after one
//! gradient query.
//!
//! Shape errors in primitives are programming errors and panic with the
//! primitive name; numeric failures surface from `backward` as
//! [`Error::NonFinite`].

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix, stored row by row. Used for one-hot heavy
/// network inputs so the first layer costs `nnz * out` instead of
/// `in * out`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    cols: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(cols: usize) -> Self {
        SparseRows { cols, rows: Vec::new() }
    }

    pub fn push_row(&mut self, entries: Vec<(usize, f64)>) {
        for &(c, v) in &entries {
            assert!(c < self.cols, "sparse column {c} out of range {}", self.cols);
            assert!(v.is_finite(), "non-finite sparse entry");
        }
        self.rows.push(entries);
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows.len().max(1), self.cols]);
        let cols = self.cols;
        for (i, r) in self.rows.iter().enumerate() {
            for &(c, v) in r {
                t.data_mut()[i * cols + c] += v;
            }
        }
        t
    }
}

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    SparseMatMul(Rc<SparseRows>, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LogSigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick(Var, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    RowSum(Var),
    WeightedSum(Var, Rc<[f64]>),
    ClippedSurrogate { log_ratio: Var, adv: Rc<[f64]>, eps: f64 },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default)]
pub struct Grads {
    params: Vec<Option<Tensor>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.params.get(id.index()).and_then(|g| g.as_ref())
    }

    pub fn insert(&mut self, id: ParamId, g: Tensor) {
        let k = id.index();
        if self.params.len() <= k {
            self.params.resize(k + 1, None);
        }
        self.params[k] = Some(g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.params
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId::new(i), t)))
    }

    /// Flattens into one vector in `ParamSet` order; absent gradients are zeros.
    pub fn flatten(&self, params: &ParamSet) -> Vec<f64> {
        let mut out = Vec::with_capacity(params.num_values());
        for (id, _, value) in params.iter() {
            match self.get(id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(core::iter::repeat(0.0).take(value.len())),
            }
        }
        out
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.params.iter_mut().flatten() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Grads) {
        if self.params.len() < other.params.len() {
            self.params.resize(other.params.len(), None);
        }
        for (i, g) in other.params.iter().enumerate() {
            if let Some(g) = g {
                match &mut self.params[i] {
                    Some(mine) => {
                        for (a, b) in mine.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g.clone()),
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        let s: f64 = self
            .params
            .iter()
            .flatten()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum();
        math::sqrt(s)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) {
    assert!(
        a.shape() == b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    /// Records the current value of a parameter. Gradients flow back to `id`.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Var {
        self.push(Op::Param(id), params.value(id).clone())
    }

    /// `a[m,k] · b[k,n]`; a 1-D `a` is a single row.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        assert!(tb.shape().len() == 2 && tb.rows() == k, "matmul: {:?} x {:?}", ta.shape(), tb.shape());
        let mut out = vec![0.0; m * n];
        matmul_acc(ta.data(), tb.data(), m, k, n, &mut out);
        self.push(Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    /// `a[m,k] · b[n,k]ᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
        assert!(tb.cols() == k, "matmul_bt: {:?} x {:?}ᵀ", ta.shape(), tb.shape());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let ar = &ta.data()[i * k..(i + 1) * k];
            for j in 0..n {
                out[i * n + j] = dot(ar, &tb.data()[j * k..(j + 1) * k]);
            }
        }
        self.push(Op::MatMulBt(a, b), Tensor::from_parts(vec![m, n], out))
    }

    /// Constant sparse rows times a dense matrix.
    pub fn sparse_matmul(&mut self, s: Rc<SparseRows>, w: Var) -> Var {
        let tw = self.value(w);
        assert!(
            tw.shape().len() == 2 && tw.rows() == s.cols(),
            "sparse_matmul: [{}, {}] x {:?}",
            s.len(),
            s.cols(),
            tw.shape()
        );
        let n = tw.cols();
        let m = s.len();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for &(c, v) in s.row(i) {
                axpy(v, &tw.data()[c * n..(c + 1) * n], orow);
            }
        }
        self.push(Op::SparseMatMul(s, w), Tensor::from_parts(vec![m, n], out))
    }

    /// Adds a length-`n` bias to every row of `x[m,n]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (tx, tb) = (self.value(x), self.value(b));
        let n = tx.cols();
        assert!(tb.len() == n, "add_bias: {:?} + {:?}", tx.shape(), tb.shape());
        let mut out = tx.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(tb.data()) {
                *o += bv;
            }
        }
        let shape = tx.shape().to_vec();
        self.push(Op::AddBias(x, b), Tensor::from_parts(shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("add", ta, tb);
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Add(a, b), Tensor::from_parts(shape, out))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("sub", ta, tb);
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Sub(a, b), Tensor::from_parts(shape, out))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb);
        let out = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let shape = ta.shape().to_vec();
        self.push(Op::Mul(a, b), Tensor::from_parts(shape, out))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x * s).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Scale(a, s), Tensor::from_parts(shape, out))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|x| x + s).collect();
        let shape = t.shape().to_vec();
        self.push(Op::AddScalar(a), Tensor::from_parts(shape, out))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let out = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(op, Tensor::from_parts(shape, out))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, math::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::logistic, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, math::exp, Op::Exp(a))
    }

    /// `ln(logistic(x))`, elementwise and overflow-free.
    pub fn log_sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, math::log_logistic, Op::LogSigmoid(a))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            math::log_softmax_in_place(row);
            for v in row.iter_mut() {
                *v = math::exp(*v);
            }
        }
        let shape = t.shape().to_vec();
        self.push(Op::Softmax(a), Tensor::from_parts(shape, out))
    }

    /// Row-wise log-softmax with max subtraction.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.cols();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(n) {
            math::log_softmax_in_place(row);
        }
        let shape = t.shape().to_vec();
        self.push(Op::LogSoftmax(a), Tensor::from_parts(shape, out))
    }

    /// Picks `x[i, idx[i]]` from every row; result has one value per row.
    pub fn pick(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(idx.len() == m, "pick: {} indices for {} rows", idx.len(), m);
        let out = idx
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < n, "pick: index {j} out of range {n}");
                t.data()[i * n + j]
            })
            .collect();
        self.push(Op::Pick(a, idx), Tensor::from_parts(vec![m], out))
    }

    /// Selects rows of a matrix (embedding lookup).
    pub fn gather_rows(&mut self, a: Var, idx: Rc<[usize]>) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let mut out = Vec::with_capacity(idx.len() * n);
        for &i in idx.iter() {
            assert!(i < m, "gather_rows: row {i} out of range {m}");
            out.extend_from_slice(t.row(i));
        }
        let len = idx.len();
        self.push(Op::GatherRows(a, idx), Tensor::from_parts(vec![len, n], out))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: nothing to concatenate");
        let m = self.value(parts[0]).rows();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let t = self.value(p);
                assert!(t.rows() == m, "concat_cols: row mismatch {} vs {}", t.rows(), m);
                t.cols()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; m * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let t = self.value(p);
            for i in 0..m {
                out[i * total + off..i * total + off + w].copy_from_slice(t.row(i));
            }
            off += w;
        }
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_parts(vec![m, total], out))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows: nothing to concatenate");
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut m = 0;
        for &p in parts {
            let t = self.value(p);
            assert!(t.cols() == n, "concat_rows: column mismatch {} vs {}", t.cols(), n);
            out.extend_from_slice(t.data());
            m += t.rows();
        }
        self.push(Op::ConcatRows(parts.to_vec()), Tensor::from_parts(vec![m, n], out))
    }

    /// Columns `[start, start + len)` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        assert!(start + len <= n && len > 0, "slice_cols: [{start}, {}) of {n}", start + len);
        let mut out = Vec::with_capacity(m * len);
        for i in 0..m {
            out.extend_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols(a, start), Tensor::from_parts(vec![m, len], out))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a);
        assert!(
            shape.iter().product::<usize>() == t.len(),
            "reshape: {:?} -> {:?}",
            t.shape(),
            shape
        );
        let data = t.data().to_vec();
        self.push(Op::Reshape(a), Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(s))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Sums each row of a matrix; result has one value per row.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = (t.rows(), t.cols());
        let out = t.data().chunks(n).map(|r| r.iter().sum()).collect();
        self.push(Op::RowSum(a), Tensor::from_parts(vec![m], out))
    }

    /// `Σ w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, w: Rc<[f64]>) -> Var {
        let t = self.value(a);
        assert!(w.len() == t.len(), "weighted_sum: {} weights for {} values", w.len(), t.len());
        let s = dot(t.data(), &w);
        self.push(Op::WeightedSum(a, w), Tensor::scalar(s))
    }

    /// Clipped importance-weighted surrogate `min(r·A, clip(r, 1-ε, 1+ε)·A)`
    /// with `r = exp(log_ratio)`, elementwise.
    pub fn clipped_surrogate(&mut self, log_ratio: Var, adv: Rc<[f64]>, eps: f64) -> Var {
        let t = self.value(log_ratio);
        assert!(adv.len() == t.len(), "clipped_surrogate: {} advantages for {} ratios", adv.len(), t.len());
        let out = t
            .data()
            .iter()
            .zip(adv.iter())
            .map(|(&lr, &a)| {
                let r = math::exp(lr);
                let rc = r.clamp(1.0 - eps, 1.0 + eps);
                (r * a).min(rc * a)
            })
            .collect();
        let shape = t.shape().to_vec();
        self.push(Op::ClippedSurrogate { log_ratio, adv, eps }, Tensor::from_parts(shape, out))
    }

    /// Gradients of the scalar `output` with respect to every parameter node.
    pub fn backward(&self, output: Var) -> Result<Grads> {
        let out_len = self.value(output).len();
        if out_len != 1 {
            return Err(Error::contract(format!(
                "gradient output must be scalar, node {} has {} values",
                output.0, out_len
            )));
        }
        for (i, node) in self.nodes[..=output.0].iter().enumerate() {
            if !node.value.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
        }

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![1.0]);
        let mut grads = Grads::default();

        for i in (0..=output.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { node: i });
            }
            let node = &self.nodes[i];
            let y = node.value.data();
            match &node.op {
                Op::Const => {}
                Op::Param(id) => {
                    let k = id.index();
                    if grads.params.len() <= k {
                        grads.params.resize(k + 1, None);
                    }
                    match &mut grads.params[k] {
                        Some(t) => axpy(1.0, &g, t.data_mut()),
                        slot @ None => {
                            *slot = Some(Tensor::from_parts(node.value.shape().to_vec(), g))
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    {
                        let da = slot(&mut adj, *a, ta.len());
                        for i in 0..m {
                            let gr = &g[i * n..(i + 1) * n];
                            for p in 0..k {
                                da[i * k + p] += dot(gr, &tb.data()[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    let db = slot(&mut adj, *b, tb.len());
                    for i in 0..m {
                        let gr = &g[i * n..(i + 1) * n];
                        for p in 0..k {
                            let av = ta.data()[i * k + p];
                            if av != 0.0 {
                                axpy(av, gr, &mut db[p * n..(p + 1) * n]);
                            }
                        }
                    }
                }
                Op::MatMulBt(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.rows());
                    {
                        let da = slot(&mut adj, *a, ta.len());
                        for i in 0..m {
                            for j in 0..n {
                                let gv = g[i * n + j];
                                if gv != 0.0 {
                                    axpy(gv, &tb.data()[j * k..(j + 1) * k], &mut da[i * k..(i + 1) * k]);
                                }
                            }
                        }
                    }
                    let db = slot(&mut adj, *b, tb.len());
                    for i in 0..m {
                        for j in 0..n {
                            let gv = g[i * n + j];
                            if gv != 0.0 {
                                axpy(gv, &ta.data()[i * k..(i + 1) * k], &mut db[j * k..(j + 1) * k]);
                            }
                        }
                    }
                }
                Op::SparseMatMul(s, w) => {
                    let tw = self.value(*w);
                    let n = tw.cols();
                    let dw = slot(&mut adj, *w, tw.len());
                    for r in 0..s.len() {
                        let gr = &g[r * n..(r + 1) * n];
                        for &(c, v) in s.row(r) {
                            axpy(v, gr, &mut dw[c * n..(c + 1) * n]);
                        }
                    }
                }
                Op::AddBias(x, b) => {
                    axpy(1.0, &g, slot(&mut adj, *x, g.len()));
                    let n = self.value(*b).len();
                    let db = slot(&mut adj, *b, n);
                    for row in g.chunks(n) {
                        axpy(1.0, row, db);
                    }
                }
                Op::Add(a, b) => {
                    axpy(1.0, &g, slot(&mut adj, *a, g.len()));
                    axpy(1.0, &g, slot(&mut adj, *b, g.len()));
                }
                Op::Sub(a, b) => {
                    axpy(1.0, &g, slot(&mut adj, *a, g.len()));
                    axpy(-1.0, &g, slot(&mut adj, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    {
                        let da = slot(&mut adj, *a, g.len());
                        for ((d, gv), bv) in da.iter_mut().zip(&g).zip(tb.data()) {
                            *d += gv * bv;
                        }
                    }
                    let db = slot(&mut adj, *b, g.len());
                    for ((d, gv), av) in db.iter_mut().zip(&g).zip(ta.data()) {
                        *d += gv * av;
                    }
                }
                Op::Scale(a, s) => axpy(*s, &g, slot(&mut adj, *a, g.len())),
                Op::AddScalar(a) | Op::Reshape(a) => axpy(1.0, &g, slot(&mut adj, *a, g.len())),
                Op::Tanh(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv * (1.0 - yv);
                    }
                }
                Op::Exp(a) => {
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gv), yv) in da.iter_mut().zip(&g).zip(y) {
                        *d += gv * yv;
                    }
                }
                Op::LogSigmoid(a) => {
                    let x = self.value(*a).data();
                    let da = slot(&mut adj, *a, g.len());
                    for ((d, gv), xv) in da.iter_mut().zip(&g).zip(x) {
                        *d += gv * math::logistic(-xv);
                    }
                }
                Op::Softmax(a) => {
                    let n = node.value.cols();
                    let da = slot(&mut adj, *a, g.len());
                    for ((dr, gr), yr) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s = dot(gr, yr);
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yv * (gv - s);
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let n = node.value.cols();
                    let da = slot(&mut adj, *a, g.len());
                    for ((dr, gr), yr) in da.chunks_mut(n).zip(g.chunks(n)).zip(y.chunks(n)) {
                        let s: f64 = gr.iter().sum();
                        for ((d, gv), yv) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += gv - math::exp(*yv) * s;
                        }
                    }
                }
                Op::Pick(a, idx) => {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let da = slot(&mut adj, *a, ta.len());
                    for (i, &j) in idx.iter().enumerate() {
                        da[i * n + j] += g[i];
                    }
                }
                Op::GatherRows(a, idx) => {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let da = slot(&mut adj, *a, ta.len());
                    for (r, &i) in idx.iter().enumerate() {
                        axpy(1.0, &g[r * n..(r + 1) * n], &mut da[i * n..(i + 1) * n]);
                    }
                }
                Op::ConcatCols(parts) => {
                    let total = node.value.cols();
                    let m = node.value.rows();
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let dp = slot(&mut adj, p, m * w);
                        for i in 0..m {
                            axpy(1.0, &g[i * total + off..i * total + off + w], &mut dp[i * w..(i + 1) * w]);
                        }
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        axpy(1.0, &g[off..off + len], slot(&mut adj, p, len));
                        off += len;
                    }
                }
                Op::SliceCols(a, start) => {
                    let ta = self.value(*a);
                    let (m, n) = (ta.rows(), ta.cols());
                    let w = node.value.cols();
                    let da = slot(&mut adj, *a, ta.len());
                    for i in 0..m {
                        axpy(1.0, &g[i * w..(i + 1) * w], &mut da[i * n + start..i * n + start + w]);
                    }
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    for d in slot(&mut adj, *a, n).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::RowSum(a) => {
                    let ta = self.value(*a);
                    let n = ta.cols();
                    let da = slot(&mut adj, *a, ta.len());
                    for (dr, gv) in da.chunks_mut(n).zip(&g) {
                        for d in dr.iter_mut() {
                            *d += gv;
                        }
                    }
                }
                Op::WeightedSum(a, w) => axpy(g[0], w, slot(&mut adj, *a, w.len())),
                Op::ClippedSurrogate { log_ratio, adv, eps } => {
                    let lr = self.value(*log_ratio).data();
                    let da = slot(&mut adj, *log_ratio, g.len());
                    for i in 0..g.len() {
                        let r = math::exp(lr[i]);
                        let a = adv[i];
                        let rc = r.clamp(1.0 - eps, 1.0 + eps);
                        if r * a <= rc * a {
                            da[i] += g[i] * r * a;
                        }
                    }
                }
            }
        }
        Ok(grads)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

pub(crate) fn matmul_acc(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av != 0.0 {
                axpy(av, &b[p * n..(p + 1) * n], orow);
            }
        }
    }
}

/// `reverse_grad`: zeroes the accumulators of `params`, then accumulates
/// d(output)/d(param) for every parameter reached from `output`.
pub fn reverse_grad(graph: &Graph, output: Var, params: &mut ParamSet) -> Result<()> {
    params.zero_grad();
    let grads = graph.backward(output)?;
    params.accumulate(&grads);
    Ok(())
}
