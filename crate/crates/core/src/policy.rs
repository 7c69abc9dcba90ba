//! The one-step option policy.
//!
//! High level `π_θ(Z | S, Z', C)`:
//! `q = linear([S, C, W_C[Z']])`, `dense = MHA(q, W_C, W_C)`, option logits
//! `= linear(dense)`. Low level `π_φ(A | S, Z, C) = MLP([S, C, W_C[Z]])`.
//! `W_C` enters the low level as a constant, so only the attention path
//! trains it.
//!
//! Options are re-drawn at every step; `Z_0` is the dummy option 0.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::env::{TaskContext, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, SparseRows, Var};
use crate::math;
use crate::nn::{self, Input, Linear, Mha, Mlp};
use crate::params::{ParamId, ParamSet};
use crate::rng::{self, Stream};

pub const DUMMY_OPTION: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyConfig {
    pub num_cells: usize,
    /// Width of the context fed to the networks; 0 strips it.
    pub ctx_dim: usize,
    pub num_actions: usize,
    pub num_options: usize,
    pub embed: usize,
    pub hidden: Vec<usize>,
    pub heads: usize,
}

impl PolicyConfig {
    pub fn for_spec(spec: &TaskSpec, num_options: usize, use_context: bool) -> Self {
        PolicyConfig {
            num_cells: spec.num_cells(),
            ctx_dim: if use_context { spec.context_dim() } else { 0 },
            num_actions: spec.num_actions,
            num_options,
            embed: 16,
            hidden: vec![64, 64],
            heads: 2,
        }
    }
}

/// Network structure; values live in a separate [`ParamSet`].
#[derive(Clone, Debug)]
pub struct PolicyNet {
    pub cfg: PolicyConfig,
    pub wc: ParamId,
    q_sc: ParamId,
    q_z: ParamId,
    q_b: ParamId,
    mha: Mha,
    out: Linear,
    low: Mlp,
}

/// One row of a policy query: agent cell, network context, option input
/// (`Z'` for the high level, `Z` for the low level).
#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    pub pos: usize,
    pub ctx: &'a [f64],
    pub option: usize,
}

impl PolicyNet {
    /// Output layers start at zero so both heads begin uniform.
    pub fn new<R: RngCore + ?Sized>(cfg: PolicyConfig, p: &mut ParamSet, rng: &mut R) -> Result<Self> {
        if cfg.num_options == 0 || cfg.embed == 0 || cfg.num_actions == 0 {
            return Err(Error::contract("policy needs options, embedding width and actions"));
        }
        let e = cfg.embed;
        let sc = cfg.num_cells + cfg.ctx_dim;
        let wc = p.add_uniform("wc", &[cfg.num_options, e], e, rng)?;
        let q_sc = p.add_uniform("high.q.sc", &[sc, e], sc + e, rng)?;
        let q_z = p.add_uniform("high.q.z", &[e, e], sc + e, rng)?;
        let q_b = p.add_zeros("high.q.b", &[e])?;
        let mha = Mha::new(p, "high.mha", e, e, cfg.heads, rng)?;
        let out = Linear::new_zero(p, "high.out", e, cfg.num_options)?;
        let low = Mlp::new(p, "low", sc + e, &cfg.hidden, cfg.num_actions, true, rng)?;
        Ok(PolicyNet { cfg, wc, q_sc, q_z, q_b, mha, out, low })
    }

    fn check(&self, q: &Query) {
        assert!(q.pos < self.cfg.num_cells, "policy: cell {} out of range", q.pos);
        assert!(q.option < self.cfg.num_options, "policy: option {} out of range", q.option);
        assert!(
            self.cfg.ctx_dim == 0 || q.ctx.len() == self.cfg.ctx_dim,
            "policy: context width {} vs {}",
            q.ctx.len(),
            self.cfg.ctx_dim
        );
    }

    fn state_ctx_row(&self, q: &Query, extra: usize) -> Vec<(usize, f64)> {
        let mut row = Vec::with_capacity(1 + self.cfg.ctx_dim + extra);
        row.push((q.pos, 1.0));
        if self.cfg.ctx_dim > 0 {
            for (k, &c) in q.ctx.iter().enumerate() {
                if c != 0.0 {
                    row.push((self.cfg.num_cells + k, c));
                }
            }
        }
        row
    }

    /// Option logits `[B, N]` for rows `(S_{t-1}, C, Z_{t-1})`.
    pub fn high_logits(&self, g: &mut Graph, p: &ParamSet, rows: &[Query]) -> Var {
        let sc = self.cfg.num_cells + self.cfg.ctx_dim;
        let mut sp = SparseRows::new(sc);
        for q in rows {
            self.check(q);
            sp.push_row(self.state_ctx_row(q, 0));
        }
        let w_sc = g.param(p, self.q_sc);
        let a = g.sparse_matmul(Rc::new(sp), w_sc);
        let wc = g.param(p, self.wc);
        let prev: Rc<[usize]> = rows.iter().map(|q| q.option).collect();
        let emb = g.gather_rows(wc, prev);
        let w_z = g.param(p, self.q_z);
        let bz = g.matmul(emb, w_z);
        let s = g.add(a, bz);
        let b = g.param(p, self.q_b);
        let query = g.add_bias(s, b);
        let dense = self.mha.forward(g, p, query, wc, wc);
        self.out.forward(g, p, &Input::Dense(dense))
    }

    /// Action logits `[B, |A|]` for rows `(S_{t-1}, C, Z_t)`.
    pub fn low_logits(&self, g: &mut Graph, p: &ParamSet, rows: &[Query]) -> Var {
        let cfg = &self.cfg;
        let e = cfg.embed;
        let off = cfg.num_cells + cfg.ctx_dim;
        let wc = p.value(self.wc).data();
        let mut sp = SparseRows::new(off + e);
        for q in rows {
            self.check(q);
            let mut row = self.state_ctx_row(q, e);
            let emb = &wc[q.option * e..(q.option + 1) * e];
            row.extend(emb.iter().enumerate().map(|(k, &v)| (off + k, v)));
            sp.push_row(row);
        }
        self.low.forward(g, p, &Input::Sparse(Rc::new(sp)))
    }

    pub fn high_dist(&self, p: &ParamSet, q: Query) -> Vec<f64> {
        let mut g = Graph::new();
        let l = self.high_logits(&mut g, p, &[q]);
        math::softmax(g.value(l).data())
    }

    pub fn low_dist(&self, p: &ParamSet, q: Query) -> Vec<f64> {
        let mut g = Graph::new();
        let l = self.low_logits(&mut g, p, &[q]);
        math::softmax(g.value(l).data())
    }

    /// Per-step `log π_θ(Z_t|·)` and `log π_φ(A_{t-1}|·)` for every step of
    /// every trajectory, concatenated in trajectory order. Both outputs have
    /// one entry per step.
    pub fn step_logprobs(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> (Var, Var) {
        let mut hq = Vec::new();
        let mut lq = Vec::new();
        let mut zs = Vec::new();
        let mut acts = Vec::new();
        for tr in trajs {
            let ctx = tr.net_context(self.cfg.ctx_dim);
            for t in 1..=tr.len() {
                hq.push(Query { pos: tr.states[t - 1], ctx, option: tr.options[t - 1] });
                lq.push(Query { pos: tr.states[t - 1], ctx, option: tr.options[t] });
                zs.push(tr.options[t]);
                acts.push(tr.actions[t - 1]);
            }
        }
        let hl = self.high_logits(g, p, &hq);
        let ll = self.low_logits(g, p, &lq);
        let lh = nn::categorical_logprob(g, hl, zs.into());
        let la = nn::categorical_logprob(g, ll, acts.into());
        (lh, la)
    }

    /// `Σ_t [log π_θ(Z_t|S_{t-1},Z_{t-1},C) + log π_φ(A_{t-1}|S_{t-1},Z_t,C)]`.
    pub fn joint_logprob(&self, p: &ParamSet, traj: &HierTrajectory) -> f64 {
        let mut g = Graph::new();
        let (lh, la) = self.step_logprobs(&mut g, p, &[traj]);
        g.value(lh).data().iter().sum::<f64>() + g.value(la).data().iter().sum::<f64>()
    }
}

#[derive(Clone, Debug)]
pub struct HierPolicy {
    pub net: PolicyNet,
    pub params: ParamSet,
}

impl HierPolicy {
    pub fn new<R: RngCore + ?Sized>(cfg: PolicyConfig, rng: &mut R) -> Result<Self> {
        let mut params = ParamSet::new();
        let net = PolicyNet::new(cfg, &mut params, rng)?;
        Ok(HierPolicy { net, params })
    }

    pub fn cfg(&self) -> &PolicyConfig {
        &self.net.cfg
    }

    pub fn high_dist(&self, pos: usize, ctx: &[f64], z_prev: usize) -> Vec<f64> {
        self.net.high_dist(&self.params, Query { pos, ctx, option: z_prev })
    }

    pub fn low_dist(&self, pos: usize, ctx: &[f64], z: usize) -> Vec<f64> {
        self.net.low_dist(&self.params, Query { pos, ctx, option: z })
    }

    pub fn joint_logprob(&self, traj: &HierTrajectory) -> f64 {
        self.net.joint_logprob(&self.params, traj)
    }

    /// Whether a parameter belongs to the transferable part (low level and `W_C`).
    pub fn is_transferable(name: &str) -> bool {
        name == "wc" || name.starts_with("low.")
    }
}

/// An extended trajectory `(X_{0:T}, Z_{0:T}, C)` with behaviour log-probs.
#[derive(Clone, Debug, PartialEq)]
pub struct HierTrajectory {
    pub context: TaskContext,
    /// Agent cells `S_0..S_T`.
    pub states: Vec<usize>,
    /// `Z_0..Z_T`, `Z_0` is the dummy.
    pub options: Vec<usize>,
    /// `A_0..A_{T-1}`.
    pub actions: Vec<usize>,
    /// `log π_θ(Z_t|·)` for `t = 1..T`.
    pub logp_high: Vec<f64>,
    /// `log π_φ(A_{t-1}|·)` for `t = 1..T`.
    pub logp_low: Vec<f64>,
    /// Hidden environment reward of each transition.
    pub env_rewards: Vec<f64>,
}

impl HierTrajectory {
    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn validate(&self, num_options: usize) -> Result<()> {
        let t = self.actions.len();
        if self.states.len() != t + 1 || self.options.len() != t + 1 {
            return Err(Error::contract(format!(
                "trajectory lengths: {} states, {} options, {} actions",
                self.states.len(),
                self.options.len(),
                t
            )));
        }
        if self.options[0] != DUMMY_OPTION {
            return Err(Error::contract("Z_0 must be the dummy option"));
        }
        if self.options.iter().any(|&z| z >= num_options) {
            return Err(Error::contract("option index out of range"));
        }
        Ok(())
    }

    /// Context slice fed to networks of width `dim` (empty when stripped).
    pub fn net_context(&self, dim: usize) -> &[f64] {
        if dim == 0 {
            &[]
        } else {
            &self.context.value
        }
    }

    pub fn total_env_reward(&self) -> f64 {
        self.env_rewards.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    Argmax,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn draw(p: &[f64], mode: SampleMode, rng: &mut Stream) -> usize {
    match mode {
        SampleMode::Stochastic => rng::categorical(rng, p),
        SampleMode::Argmax => argmax(p),
    }
}

/// Rolls out one trajectory per context in lockstep. Trajectory `i` draws
/// from `rngs[i]` only, so results do not depend on how trajectories are
/// batched.
pub fn rollout_batch(
    policy: &HierPolicy,
    spec: &TaskSpec,
    contexts: &[TaskContext],
    rngs: &mut [Stream],
    mode: SampleMode,
) -> Result<Vec<HierTrajectory>> {
    assert_eq!(contexts.len(), rngs.len(), "rollout_batch: one stream per trajectory");
    let net = &policy.net;
    let dim = net.cfg.ctx_dim;
    let mut states = Vec::with_capacity(contexts.len());
    let mut trajs = Vec::with_capacity(contexts.len());
    for c in contexts {
        let s = spec.reset(c)?;
        trajs.push(HierTrajectory {
            context: c.clone(),
            states: vec![s.pos],
            options: vec![DUMMY_OPTION],
            actions: Vec::new(),
            logp_high: Vec::new(),
            logp_low: Vec::new(),
            env_rewards: Vec::new(),
        });
        states.push(s);
    }
    loop {
        let live: Vec<usize> = (0..states.len()).filter(|&i| !states[i].done).collect();
        if live.is_empty() {
            break;
        }
        let hq: Vec<Query> = live
            .iter()
            .map(|&i| Query {
                pos: states[i].pos,
                ctx: trajs[i].net_context(dim),
                option: *trajs[i].options.last().unwrap(),
            })
            .collect();
        let mut g = Graph::new();
        let hl = net.high_logits(&mut g, &policy.params, &hq);
        let hlv = g.value(hl).clone();
        let n = net.cfg.num_options;
        let mut zs = Vec::with_capacity(live.len());
        let mut lps = Vec::with_capacity(live.len());
        for (k, &i) in live.iter().enumerate() {
            let mut row = hlv.data()[k * n..(k + 1) * n].to_vec();
            math::log_softmax_in_place(&mut row);
            let probs: Vec<f64> = row.iter().map(|&l| math::exp(l)).collect();
            let z = draw(&probs, mode, &mut rngs[i]);
            zs.push(z);
            lps.push(row[z]);
        }
        let lq: Vec<Query> = live
            .iter()
            .zip(&zs)
            .map(|(&i, &z)| Query { pos: states[i].pos, ctx: trajs[i].net_context(dim), option: z })
            .collect();
        let ll = net.low_logits(&mut g, &policy.params, &lq);
        let llv = g.value(ll).clone();
        let na = net.cfg.num_actions;
        for (k, &i) in live.iter().enumerate() {
            let mut row = llv.data()[k * na..(k + 1) * na].to_vec();
            math::log_softmax_in_place(&mut row);
            let probs: Vec<f64> = row.iter().map(|&l| math::exp(l)).collect();
            let a = draw(&probs, mode, &mut rngs[i]);
            let (next, r, _) = spec.step(&states[i], a)?;
            let tr = &mut trajs[i];
            tr.options.push(zs[k]);
            tr.actions.push(a);
            tr.logp_high.push(lps[k]);
            tr.logp_low.push(row[a]);
            tr.env_rewards.push(r);
            tr.states.push(next.pos);
            states[i] = next;
        }
    }
    Ok(trajs)
}

/// `rollout`: a single trajectory.
pub fn rollout(policy: &HierPolicy, spec: &TaskSpec, c: &TaskContext, rng: &mut Stream, mode: SampleMode) -> Result<HierTrajectory> {
    let mut rngs = [rng.clone()];
    let mut out = rollout_batch(policy, spec, core::slice::from_ref(c), &mut rngs, mode)?;
    *rng = rngs[0].clone();
    Ok(out.pop().expect("one trajectory"))
}
