//! Named parameter tensors, gradient accumulators, checkpoints and Adam.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::graph::Grads;
use crate::math;
use crate::rng;
use crate::tensor::Tensor;

/// Position of a tensor inside its [`ParamSet`]. Stable for the set's lifetime.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub(crate) fn new(i: usize) -> Self {
        ParamId(i)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

const CHECKPOINT_MAGIC: &str = "mhairl-params";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    index: BTreeMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor) -> Result<ParamId> {
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(Error::contract(format!("invalid parameter name `{name}`")));
        }
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(Tensor::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    /// Adds a weight drawn uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn add_uniform<R: RngCore + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<ParamId> {
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        let mut t = Tensor::zeros(shape);
        for v in t.data_mut() {
            *v = rng::uniform_range(rng, -bound, bound);
        }
        self.add(name, t)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> Result<ParamId> {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_values(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    /// Replaces a tensor's values; the shape must match.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let id = self.id(name)?;
        if value.shape() != self.values[id.0].shape() {
            return Err(Error::Shape {
                op: "param_set",
                detail: format!("`{name}`: {:?} vs {:?}", value.shape(), self.values[id.0].shape()),
            });
        }
        self.values[id.0] = value;
        Ok(())
    }

    /// Iterates `(id, name, value)` in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate(&mut self, grads: &Grads) {
        for (id, g) in grads.iter() {
            for (a, b) in self.grads[id.0].data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }

    /// Accumulated gradients as a [`Grads`] value.
    pub fn grads(&self) -> Grads {
        let mut out = Grads::default();
        for (i, g) in self.grads.iter().enumerate() {
            out.insert(ParamId(i), g.clone());
        }
        out
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn unflatten(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_values(), "unflatten: length mismatch");
        let mut off = 0;
        for t in &mut self.values {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    /// Copies every tensor of `other` whose name passes `keep` into `self`.
    /// Returns the number copied.
    pub fn copy_matching(&mut self, other: &ParamSet, keep: impl Fn(&str) -> bool) -> Result<usize> {
        let mut n = 0;
        for (_, name, value) in other.iter() {
            if keep(name) {
                self.set(name, value.clone())?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// Text checkpoint: a header line, then one line per tensor with its
    /// name, rank, dimensions and the IEEE-754 bit pattern of every value
    /// in hex, so a round trip is bit exact.
    pub fn encode(&self) -> String {
        let mut out = format!("{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}\n");
        for (_, name, t) in self.iter() {
            out.push_str(name);
            out.push_str(&format!(" {}", t.shape().len()));
            for d in t.shape() {
                out.push_str(&format!(" {d}"));
            }
            for v in t.data() {
                out.push_str(&format!(" {:016x}", v.to_bits()));
            }
            out.push('\n');
        }
        out
    }

    pub fn decode(text: &str) -> Result<ParamSet> {
        let mut lines = text.lines().enumerate();
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {}: {msg}", line + 1));
        let (_, header) = lines.next().ok_or_else(|| Error::Checkpoint("empty checkpoint".into()))?;
        let mut h = header.split_whitespace();
        if h.next() != Some(CHECKPOINT_MAGIC) {
            return Err(bad(0, "not a parameter checkpoint"));
        }
        match h.next().and_then(|v| v.parse::<u32>().ok()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(bad(0, &format!("unsupported version {v}"))),
            None => return Err(bad(0, "missing version")),
        }
        let mut set = ParamSet::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(|| bad(ln, "missing name"))?;
            let rank: usize = parts
                .next()
                .and_then(|r| r.parse().ok())
                .ok_or_else(|| bad(ln, "bad rank"))?;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d: usize = parts
                    .next()
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| bad(ln, "bad dimension"))?;
                shape.push(d);
            }
            let data = parts
                .map(|w| u64::from_str_radix(w, 16).map(f64::from_bits))
                .collect::<core::result::Result<Vec<f64>, _>>()
                .map_err(|_| bad(ln, "bad value"))?;
            let t = Tensor::new(shape, data).map_err(|e| bad(ln, &e.to_string()))?;
            set.add(name, t).map_err(|e| bad(ln, &e.to_string()))?;
        }
        Ok(set)
    }
}

/// Adam with optional global gradient-norm clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, max_grad_norm: None, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn with_clip(mut self, max_norm: f64) -> Self {
        self.max_grad_norm = Some(max_norm);
        self
    }

    /// One descent step on `params` along `grads` (minimization).
    pub fn step(&mut self, params: &mut ParamSet, grads: &Grads) {
        if self.m.len() != params.len() {
            self.m = params.values.iter().map(|t| alloc::vec![0.0; t.len()]).collect();
            self.v = self.m.clone();
            self.t = 0;
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let n = grads.global_norm();
                if n > max { max / n } else { 1.0 }
            }
            None => 1.0,
        };
        self.t += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.t as f64);
        for (id, g) in grads.iter() {
            let i = id.index();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = params.values[i].data_mut();
            for k in 0..p.len() {
                let gk = g.data()[k] * scale;
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * gk;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * gk * gk;
                let mh = m[k] / b1t;
                let vh = v[k] / b2t;
                p[k] -= self.lr * mh / (math::sqrt(vh) + self.eps);
            }
        }
    }
}

/// Plain gradient descent, used where the optimizer must not add state.
pub fn sgd_step(params: &mut ParamSet, grads: &Grads, lr: f64) {
    for (id, g) in grads.iter() {
        for (p, gv) in params.values[id.index()].data_mut().iter_mut().zip(g.data()) {
            *p -= lr * gv;
        }
    }
}
