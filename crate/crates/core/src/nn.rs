//! Network building blocks on top of [`Graph`]: linear layers, tanh MLPs,
//! the gated recurrent cell, multi-head attention and log-density heads.
//!
//! Every block owns only [`ParamId`]s; values live in a [`ParamSet`] and a
//! forward pass records nodes into a caller-provided graph. All forwards are
//! batched over rows.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::graph::{Graph, SparseRows, Var};
use crate::math;
use crate::params::{ParamId, ParamSet};
use crate::tensor::Tensor;

/// A layer input: constant sparse rows (one-hot features) or a dense node.
#[derive(Clone, Debug)]
pub enum Input {
    Sparse(Rc<SparseRows>),
    Dense(Var),
}

impl Input {
    pub fn rows(&self, g: &Graph) -> usize {
        match self {
            Input::Sparse(s) => s.len(),
            Input::Dense(v) => g.value(*v).rows(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Linear {
    pub fn new<R: RngCore + ?Sized>(p: &mut ParamSet, name: &str, inp: usize, out: usize, rng: &mut R) -> Result<Self> {
        let w = p.add_uniform(&format!("{name}.w"), &[inp, out], inp, rng)?;
        let b = p.add_zeros(&format!("{name}.b"), &[out])?;
        Ok(Linear { w, b, inp, out })
    }

    /// Weights and bias start at zero, so the layer initially outputs zeros.
    pub fn new_zero(p: &mut ParamSet, name: &str, inp: usize, out: usize) -> Result<Self> {
        let w = p.add_zeros(&format!("{name}.w"), &[inp, out])?;
        let b = p.add_zeros(&format!("{name}.b"), &[out])?;
        Ok(Linear { w, b, inp, out })
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamSet, x: &Input) -> Var {
        let w = g.param(p, self.w);
        let xw = match x {
            Input::Sparse(s) => g.sparse_matmul(s.clone(), w),
            Input::Dense(v) => g.matmul(*v, w),
        };
        let b = g.param(p, self.b);
        g.add_bias(xw, b)
    }
}

/// Fully connected network with tanh between layers and a linear output.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: RngCore + ?Sized>(
        p: &mut ParamSet,
        name: &str,
        inp: usize,
        hidden: &[usize],
        out: usize,
        zero_output: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut prev = inp;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(p, &format!("{name}.{i}"), prev, h, rng)?);
            prev = h;
        }
        let last = format!("{name}.{}", hidden.len());
        layers.push(if zero_output {
            Linear::new_zero(p, &last, prev, out)?
        } else {
            Linear::new(p, &last, prev, out, rng)?
        });
        Ok(Mlp { layers })
    }

    pub fn inp(&self) -> usize {
        self.layers[0].inp
    }

    pub fn out(&self) -> usize {
        self.layers[self.layers.len() - 1].out
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamSet, x: &Input) -> Var {
        let mut h = self.layers[0].forward(g, p, x);
        for layer in &self.layers[1..] {
            let a = g.tanh(h);
            h = layer.forward(g, p, &Input::Dense(a));
        }
        h
    }
}

/// Gated recurrent cell. With `u = [x; h]`:
/// `z = σ(W_z u + b_z)`, `r = σ(W_r u + b_r)`,
/// `h̃ = tanh(W_h [x; r⊙h] + b_h)`, `h' = (1 − z)⊙h + z⊙h̃`.
///
/// The input half of the three weight matrices is stored side by side as
/// `wx: [inp, 3H]` (order z, r, h̃) so a whole sequence can be projected
/// in one product; the recurrent halves are `wh_zr: [H, 2H]` and `wh_h: [H, H]`.
#[derive(Clone, Debug)]
pub struct Gru {
    pub wx: ParamId,
    pub wh_zr: ParamId,
    pub wh_h: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: RngCore + ?Sized>(p: &mut ParamSet, name: &str, inp: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        let fan_in = inp + hidden;
        let wx = p.add_uniform(&format!("{name}.wx"), &[inp, 3 * hidden], fan_in, rng)?;
        let wh_zr = p.add_uniform(&format!("{name}.wh_zr"), &[hidden, 2 * hidden], fan_in, rng)?;
        let wh_h = p.add_uniform(&format!("{name}.wh_h"), &[hidden, hidden], fan_in, rng)?;
        let b = p.add_zeros(&format!("{name}.b"), &[3 * hidden])?;
        Ok(Gru { wx, wh_zr, wh_h, b, inp, hidden })
    }

    /// Input-side pre-activations `x W_x + b` for any number of rows.
    pub fn project(&self, g: &mut Graph, p: &ParamSet, x: &Input) -> Var {
        let w = g.param(p, self.wx);
        let xw = match x {
            Input::Sparse(s) => {
                assert!(s.cols() == self.inp, "gru: input width {} vs {}", s.cols(), self.inp);
                g.sparse_matmul(s.clone(), w)
            }
            Input::Dense(v) => g.matmul(*v, w),
        };
        let b = g.param(p, self.b);
        g.add_bias(xw, b)
    }

    /// One recurrent update from projected inputs `xp: [B, 3H]` and `h: [B, H]`.
    pub fn step_projected(&self, g: &mut Graph, p: &ParamSet, xp: Var, h: Var) -> Var {
        let hd = self.hidden;
        assert!(g.value(h).cols() == hd, "gru: hidden width {} vs {}", g.value(h).cols(), hd);
        assert!(g.value(xp).rows() == g.value(h).rows(), "gru: batch mismatch");
        let wzr = g.param(p, self.wh_zr);
        let hzr = g.matmul(h, wzr);
        let xz = g.slice_cols(xp, 0, hd);
        let xr = g.slice_cols(xp, hd, hd);
        let xh = g.slice_cols(xp, 2 * hd, hd);
        let hz = g.slice_cols(hzr, 0, hd);
        let hr = g.slice_cols(hzr, hd, hd);
        let zs = g.add(xz, hz);
        let z = g.sigmoid(zs);
        let rs = g.add(xr, hr);
        let r = g.sigmoid(rs);
        let rh = g.mul(r, h);
        let whh = g.param(p, self.wh_h);
        let rhw = g.matmul(rh, whh);
        let cs = g.add(xh, rhw);
        let cand = g.tanh(cs);
        let diff = g.sub(cand, h);
        let upd = g.mul(z, diff);
        g.add(h, upd)
    }

    /// `gru_step(x, h)`.
    pub fn step(&self, g: &mut Graph, p: &ParamSet, x: &Input, h: Var) -> Var {
        let xp = self.project(g, p, x);
        self.step_projected(g, p, xp, h)
    }
}

/// Multi-head attention with full-width heads:
/// `MHA(q, K, V) = Concat(head_1..head_h) W^O`,
/// `head_i = Attention(q W_i^q, K W_i^K, V W_i^V)`,
/// `Attention(q, K, V) = softmax(q Kᵀ) V`, with `W_i^q, W_i^K: [d_k, d_k]`,
/// `W_i^V: [d_v, d_v]`, `W^O: [h d_v, d_v]`.
#[derive(Clone, Debug)]
pub struct Mha {
    pub heads: usize,
    pub dk: usize,
    pub dv: usize,
    pub wq: Vec<ParamId>,
    pub wk: Vec<ParamId>,
    pub wv: Vec<ParamId>,
    pub wo: ParamId,
}

impl Mha {
    pub fn new<R: RngCore + ?Sized>(p: &mut ParamSet, name: &str, dk: usize, dv: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 {
            return Err(Error::contract("attention needs at least one head"));
        }
        let mut wq = Vec::new();
        let mut wk = Vec::new();
        let mut wv = Vec::new();
        for i in 0..heads {
            wq.push(p.add_uniform(&format!("{name}.q{i}"), &[dk, dk], dk, rng)?);
            wk.push(p.add_uniform(&format!("{name}.k{i}"), &[dk, dk], dk, rng)?);
            wv.push(p.add_uniform(&format!("{name}.v{i}"), &[dv, dv], dv, rng)?);
        }
        let wo = p.add_uniform(&format!("{name}.o"), &[heads * dv, dv], heads * dv, rng)?;
        Ok(Mha { heads, dk, dv, wq, wk, wv, wo })
    }

    /// Per-head attention weights `[B, n]` followed by the output `[B, d_v]`.
    pub fn forward_with_weights(&self, g: &mut Graph, p: &ParamSet, q: Var, k: Var, v: Var) -> (Vec<Var>, Var) {
        let (tq, tk, tv) = (g.value(q), g.value(k), g.value(v));
        assert!(tq.cols() == self.dk, "mha: query width {} vs d_k {}", tq.cols(), self.dk);
        assert!(tk.cols() == self.dk && tk.shape().len() == 2, "mha: keys {:?} vs d_k {}", tk.shape(), self.dk);
        assert!(tv.cols() == self.dv && tv.rows() == tk.rows(), "mha: values {:?} vs keys {:?}", tv.shape(), tk.shape());
        let mut weights = Vec::with_capacity(self.heads);
        let mut outs = Vec::with_capacity(self.heads);
        for i in 0..self.heads {
            let wq = g.param(p, self.wq[i]);
            let wk = g.param(p, self.wk[i]);
            let wv = g.param(p, self.wv[i]);
            let qi = g.matmul(q, wq);
            let ki = g.matmul(k, wk);
            let vi = g.matmul(v, wv);
            let logits = g.matmul_bt(qi, ki);
            let a = g.softmax(logits);
            outs.push(g.matmul(a, vi));
            weights.push(a);
        }
        let cat = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let wo = g.param(p, self.wo);
        (weights, g.matmul(cat, wo))
    }

    pub fn forward(&self, g: &mut Graph, p: &ParamSet, q: Var, k: Var, v: Var) -> Var {
        self.forward_with_weights(g, p, q, k, v).1
    }
}

/// Per-row `log softmax(logits)[idx]`.
pub fn categorical_logprob(g: &mut Graph, logits: Var, idx: Rc<[usize]>) -> Var {
    let ls = g.log_softmax(logits);
    g.pick(ls, idx)
}

/// Per-row diagonal Gaussian log density, summed over columns.
pub fn gaussian_logprob(g: &mut Graph, mean: Var, log_std: Var, x: Var) -> Var {
    let d = g.sub(x, mean);
    let nls = g.neg(log_std);
    let inv = g.exp(nls);
    let zs = g.mul(d, inv);
    let z2 = g.mul(zs, zs);
    let half = g.scale(z2, -0.5);
    let t = g.sub(half, log_std);
    let t = g.add_scalar(t, -0.5 * math::LN_2PI);
    g.row_sum(t)
}

/// `log softmax(logits)[index]` on plain values.
pub fn logprob_categorical(logits: &[f64], index: usize) -> Result<f64> {
    if index >= logits.len() {
        return Err(Error::contract(format!("index {index} out of range for {} logits", logits.len())));
    }
    let mut ls = logits.to_vec();
    math::log_softmax_in_place(&mut ls);
    Ok(ls[index])
}

/// Diagonal Gaussian log density on plain values.
pub fn logprob_gaussian(mean: &[f64], log_std: &[f64], x: &[f64]) -> Result<f64> {
    if mean.len() != log_std.len() || mean.len() != x.len() {
        return Err(Error::Shape {
            op: "logprob_gaussian",
            detail: format!("{} / {} / {}", mean.len(), log_std.len(), x.len()),
        });
    }
    Ok(mean
        .iter()
        .zip(log_std)
        .zip(x)
        .map(|((&m, &ls), &xv)| {
            let z = (xv - m) * math::exp(-ls);
            -0.5 * z * z - ls - 0.5 * math::LN_2PI
        })
        .sum())
}

/// One-hot rows as a sparse input. `offsets[k]` is added to the k-th index
/// of each row so several one-hot blocks can share a row.
pub fn one_hot_rows(width: usize, rows: impl IntoIterator<Item = Vec<(usize, f64)>>) -> Rc<SparseRows> {
    let mut s = SparseRows::new(width);
    for r in rows {
        s.push_row(r);
    }
    Rc::new(s)
}

/// Dense constant matrix from row slices.
pub fn dense_rows(g: &mut Graph, rows: &[&[f64]]) -> Var {
    let cols = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * cols);
    for r in rows {
        assert!(r.len() == cols, "dense_rows: ragged rows");
        data.extend_from_slice(r);
    }
    g.constant(Tensor::from_parts(alloc::vec![rows.len(), cols], data))
}
