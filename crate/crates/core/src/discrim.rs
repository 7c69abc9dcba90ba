//! Hierarchical AIRL discriminator on the extended state-action space
//! `S̃_t = (S_t, Z_t)`, `Ã_t = (Z_{t+1}, A_t)`, plus the GAIL classifier
//! used by the ablation.
//!
//! AIRL modes score a pair with `f` and form `D = σ(f − log π(Ã|S̃, C))`.
//! The state-only form is `f = g(S_t, Z_t) + γ h(S_{t+1}, Z_{t+1}) − h(S_t, Z_t)`.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::error::{Error, Result};
use crate::graph::{Graph, Grads, SparseRows, Var};
use crate::math;
use crate::nn::{Input, Mlp};
use crate::params::{Adam, ParamSet};
use crate::policy::{HierPolicy, HierTrajectory};

pub const GAIL_CLAMP: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DiscMode {
    AirlRaw,
    AirlStateOnly { gamma: f64 },
    Gail,
}

impl DiscMode {
    pub fn is_airl(self) -> bool {
        !matches!(self, DiscMode::Gail)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscConfig {
    pub num_cells: usize,
    pub num_actions: usize,
    pub num_options: usize,
    /// 0 strips the context.
    pub ctx_dim: usize,
    pub hidden: Vec<usize>,
    pub mode: DiscMode,
}

/// A batch of extended pairs with the learner's `log π_θ + log π_φ` at each.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtendedPairs {
    pub s: Vec<usize>,
    pub z: Vec<usize>,
    pub z_next: Vec<usize>,
    pub a: Vec<usize>,
    pub s_next: Vec<usize>,
    pub ctx: Vec<Vec<f64>>,
    pub policy_logprob: Vec<f64>,
    /// Optional nonnegative multiplicities; absent means all ones.
    pub weight: Option<Vec<f64>>,
}

impl ExtendedPairs {
    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn push(&mut self, s: usize, z: usize, z_next: usize, a: usize, s_next: usize, ctx: &[f64], lp: f64) {
        self.s.push(s);
        self.z.push(z);
        self.z_next.push(z_next);
        self.a.push(a);
        self.s_next.push(s_next);
        self.ctx.push(ctx.to_vec());
        self.policy_logprob.push(lp);
    }

    /// Every step of every trajectory, in trajectory order, scored by the
    /// current `policy` (not the stored behaviour log-probs).
    pub fn from_trajectories(trajs: &[&HierTrajectory], policy: &HierPolicy, ctx_dim: usize) -> Self {
        let mut g = Graph::new();
        let (lh, la) = policy.net.step_logprobs(&mut g, &policy.params, trajs);
        let lh = g.value(lh).data();
        let la = g.value(la).data();
        let mut out = ExtendedPairs::default();
        let mut k = 0;
        for tr in trajs {
            let c = tr.net_context(ctx_dim);
            for t in 0..tr.len() {
                out.push(tr.states[t], tr.options[t], tr.options[t + 1], tr.actions[t], tr.states[t + 1], c, lh[k] + la[k]);
                k += 1;
            }
        }
        out
    }

    /// Sub-batch with the given indices (repeats allowed).
    pub fn select(&self, idx: &[usize]) -> ExtendedPairs {
        let mut out = ExtendedPairs::default();
        for &i in idx {
            out.push(self.s[i], self.z[i], self.z_next[i], self.a[i], self.s_next[i], &self.ctx[i], self.policy_logprob[i]);
        }
        out.weight = self.weight.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect());
        out
    }

    fn total_weight(&self) -> f64 {
        match &self.weight {
            Some(w) => w.iter().sum(),
            None => self.len() as f64,
        }
    }

    fn mean_weights(&self) -> Rc<[f64]> {
        let tw = self.total_weight();
        match &self.weight {
            Some(w) => w.iter().map(|&v| v / tw).collect(),
            None => vec![1.0 / tw; self.len()].into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    pub cfg: DiscConfig,
    pub params: ParamSet,
    /// `f` in raw mode, the classifier in GAIL mode, `g` in state-only mode.
    main: Mlp,
    shaping: Option<Mlp>,
    opt: Adam,
}

impl Discriminator {
    pub fn new<R: RngCore + ?Sized>(cfg: DiscConfig, lr: f64, rng: &mut R) -> Result<Self> {
        if let DiscMode::AirlStateOnly { gamma } = cfg.mode {
            if !(0.0..=1.0).contains(&gamma) {
                return Err(Error::contract(format!("discount {gamma} outside [0, 1]")));
            }
        }
        let mut params = ParamSet::new();
        let (main, shaping) = match cfg.mode {
            DiscMode::AirlStateOnly { .. } => {
                let w = cfg.num_cells + cfg.num_options + cfg.ctx_dim;
                let g = Mlp::new(&mut params, "disc.g", w, &cfg.hidden, 1, true, rng)?;
                let h = Mlp::new(&mut params, "disc.h", w, &cfg.hidden, 1, true, rng)?;
                (g, Some(h))
            }
            _ => {
                let w = cfg.num_cells + 2 * cfg.num_options + cfg.num_actions + cfg.ctx_dim;
                (Mlp::new(&mut params, "disc.f", w, &cfg.hidden, 1, true, rng)?, None)
            }
        };
        Ok(Discriminator { cfg, params, main, shaping, opt: Adam::new(lr) })
    }

    pub fn mode(&self) -> DiscMode {
        self.cfg.mode
    }

    fn push_ctx(&self, row: &mut Vec<(usize, f64)>, off: usize, ctx: &[f64]) {
        if self.cfg.ctx_dim > 0 {
            assert!(ctx.len() == self.cfg.ctx_dim, "discriminator: context width {} vs {}", ctx.len(), self.cfg.ctx_dim);
            row.extend(ctx.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, &v)| (off + k, v)));
        }
    }

    fn full_rows(&self, pairs: &ExtendedPairs) -> Rc<SparseRows> {
        let c = &self.cfg;
        let (o1, o2, o3) = (c.num_cells, c.num_cells + c.num_options, c.num_cells + 2 * c.num_options);
        let oc = o3 + c.num_actions;
        let mut sp = SparseRows::new(oc + c.ctx_dim);
        for i in 0..pairs.len() {
            assert!(pairs.s[i] < c.num_cells && pairs.a[i] < c.num_actions, "discriminator: pair {i} out of range");
            assert!(pairs.z[i] < c.num_options && pairs.z_next[i] < c.num_options, "discriminator: option out of range");
            let mut row = vec![(pairs.s[i], 1.0), (o1 + pairs.z[i], 1.0), (o2 + pairs.z_next[i], 1.0), (o3 + pairs.a[i], 1.0)];
            self.push_ctx(&mut row, oc, &pairs.ctx[i]);
            sp.push_row(row);
        }
        Rc::new(sp)
    }

    fn state_rows(&self, s: &[usize], z: &[usize], ctx: &[Vec<f64>]) -> Rc<SparseRows> {
        let c = &self.cfg;
        let oc = c.num_cells + c.num_options;
        let mut sp = SparseRows::new(oc + c.ctx_dim);
        for i in 0..s.len() {
            assert!(s[i] < c.num_cells && z[i] < c.num_options, "discriminator: state pair {i} out of range");
            let mut row = vec![(s[i], 1.0), (c.num_cells + z[i], 1.0)];
            self.push_ctx(&mut row, oc, &ctx[i]);
            sp.push_row(row);
        }
        Rc::new(sp)
    }

    fn column(g: &mut Graph, v: Var) -> Var {
        let n = g.value(v).rows();
        g.reshape(v, &[n])
    }

    /// Per-pair raw network score: `f` in AIRL modes, the logit of
    /// "generated" in GAIL mode. Shape `[B]`.
    pub fn score(&self, g: &mut Graph, p: &ParamSet, pairs: &ExtendedPairs) -> Var {
        match (self.cfg.mode, &self.shaping) {
            (DiscMode::AirlStateOnly { gamma }, Some(h)) => {
                let cur = self.state_rows(&pairs.s, &pairs.z, &pairs.ctx);
                let nxt = self.state_rows(&pairs.s_next, &pairs.z_next, &pairs.ctx);
                let gv = self.main.forward(g, p, &Input::Sparse(cur.clone()));
                let h0 = h.forward(g, p, &Input::Sparse(cur));
                let h1 = h.forward(g, p, &Input::Sparse(nxt));
                let h1 = g.scale(h1, gamma);
                let a = g.add(gv, h1);
                let f = g.sub(a, h0);
                Self::column(g, f)
            }
            _ => {
                let out = self.main.forward(g, p, &Input::Sparse(self.full_rows(pairs)));
                Self::column(g, out)
            }
        }
    }

    fn scores(&self, pairs: &ExtendedPairs) -> Vec<f64> {
        if pairs.is_empty() {
            return Vec::new();
        }
        let mut g = Graph::new();
        let v = self.score(&mut g, &self.params, pairs);
        g.value(v).data().to_vec()
    }

    /// `f_value` for every pair.
    pub fn f_values(&self, pairs: &ExtendedPairs) -> Result<Vec<f64>> {
        if !self.cfg.mode.is_airl() {
            return Err(Error::contract("f is undefined for the GAIL classifier"));
        }
        Ok(self.scores(pairs))
    }

    /// `D` per pair: `σ(f − log π)` in AIRL modes, the classifier's
    /// probability of "generated" in GAIL mode.
    pub fn d_probs(&self, pairs: &ExtendedPairs) -> Vec<f64> {
        let s = self.scores(pairs);
        match self.cfg.mode {
            DiscMode::Gail => s.iter().map(|&u| math::logistic(u)).collect(),
            _ => s.iter().zip(&pairs.policy_logprob).map(|(&f, &lp)| d_prob(f, lp)).collect(),
        }
    }

    /// `R_IL` per pair for whichever mode this discriminator is in.
    pub fn rewards(&self, pairs: &ExtendedPairs) -> Vec<f64> {
        let s = self.scores(pairs);
        match self.cfg.mode {
            DiscMode::Gail => s.iter().map(|&u| gail_reward(math::logistic(u))).collect(),
            _ => s.iter().zip(&pairs.policy_logprob).map(|(&f, &lp)| airl_reward(f, lp)).collect(),
        }
    }

    /// Cross-entropy loss graph. AIRL modes: expert pairs are labelled 1,
    /// giving `mean_E softplus(−(f − lp)) + mean_G softplus(f − lp)`.
    /// GAIL mode labels expert 0 and generated 1.
    pub fn loss_graph(&self, g: &mut Graph, p: &ParamSet, expert: &ExtendedPairs, gen: &ExtendedPairs) -> Result<Var> {
        if expert.is_empty() || gen.is_empty() {
            return Err(Error::contract("discriminator loss needs nonempty expert and generated batches"));
        }
        let logit = |g: &mut Graph, pairs: &ExtendedPairs| {
            let s = self.score(g, p, pairs);
            match self.cfg.mode {
                DiscMode::Gail => s,
                _ => {
                    let lp = g.constant(crate::tensor::Tensor::from_parts(vec![pairs.len()], pairs.policy_logprob.clone()));
                    g.sub(s, lp)
                }
            }
        };
        // softplus(x) = −log σ(−x)
        let ue = logit(g, expert);
        let ug = logit(g, gen);
        let (e_term, g_term) = match self.cfg.mode {
            DiscMode::Gail => {
                let ne = g.neg(ue);
                (g.log_sigmoid(ne), g.log_sigmoid(ug))
            }
            _ => {
                let ng = g.neg(ug);
                (g.log_sigmoid(ue), g.log_sigmoid(ng))
            }
        };
        let se = g.weighted_sum(e_term, expert.mean_weights());
        let sg = g.weighted_sum(g_term, gen.mean_weights());
        let tot = g.add(se, sg);
        Ok(g.neg(tot))
    }

    /// `disc_loss`: loss value and gradients with respect to the
    /// discriminator parameters only.
    pub fn loss(&self, expert: &ExtendedPairs, gen: &ExtendedPairs) -> Result<(f64, Grads)> {
        let mut g = Graph::new();
        let l = self.loss_graph(&mut g, &self.params, expert, gen)?;
        Ok((g.value(l).item(), g.backward(l)?))
    }

    /// One Adam step; returns the loss before the step.
    pub fn train_step(&mut self, expert: &ExtendedPairs, gen: &ExtendedPairs) -> Result<f64> {
        let (l, grads) = self.loss(expert, gen)?;
        self.opt.step(&mut self.params, &grads);
        Ok(l)
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.opt.lr = lr;
    }
}

/// `D = exp(f) / (exp(f) + π) = σ(f − log π)`.
pub fn d_prob(f: f64, policy_logprob: f64) -> f64 {
    math::logistic(f - policy_logprob)
}

/// `log D − log(1 − D)`, which is `f − log π` exactly.
pub fn airl_reward(f: f64, policy_logprob: f64) -> f64 {
    f - policy_logprob
}

/// `−log D` with `D` clamped to `[1e-8, 1 − 1e-8]`.
pub fn gail_reward(d: f64) -> f64 {
    -math::ln(d.clamp(GAIL_CLAMP, 1.0 - GAIL_CLAMP))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_forms() {
        assert_eq!(d_prob(-1.3, -1.3), 0.5);
        assert!((d_prob(4f64.ln() - 0.7, -0.7) - 0.8).abs() < 1e-12);
        assert!((gail_reward(1.0 / core::f64::consts::E) - 1.0).abs() < 1e-12);
        assert!(gail_reward(1.0) < 1e-7);
        assert!((gail_reward(0.0) - 1e8f64.ln()).abs() < 1e-9);
    }
}
