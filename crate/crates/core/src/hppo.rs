//! Hierarchical PPO: level-specific baselines, advantages
//! `Ret_t − b_high(S_{t−1}, Z_{t−1}|C)` and `Ret_t − b_low(S_{t−1}, Z_t|C)`,
//! and clipped-surrogate updates of both policy levels.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::env::{TaskContext, TaskSpec};
use crate::error::{Error, Result};
use crate::graph::{Graph, Grads, SparseRows, Var};
use crate::math;
use crate::nn::{Input, Mlp};
use crate::objective::{assemble_returns, ObjectiveWeights, ReturnInputs, ReturnTable};
use crate::params::{Adam, ParamSet};
use crate::policy::{rollout, rollout_batch, HierPolicy, HierTrajectory, SampleMode};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub lr_policy: f64,
    pub lr_baseline: f64,
    /// Trajectories per minibatch.
    pub minibatch: usize,
    /// Trajectories collected per episode.
    pub trajectories: usize,
    pub standardize: bool,
    pub baseline_steps: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip: 0.2,
            epochs: 4,
            lr_policy: 1e-3,
            lr_baseline: 1e-3,
            minibatch: 8,
            trajectories: 32,
            standardize: true,
            baseline_steps: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::contract(format!("clip {} outside (0, 1)", self.clip)));
        }
        if self.epochs == 0 || self.minibatch == 0 || self.trajectories == 0 {
            return Err(Error::contract("epochs, minibatch and trajectories must be positive"));
        }
        Ok(())
    }
}

/// `b_high` over `(S_{t−1}, Z_{t−1}, C)` and `b_low` over `(S_{t−1}, Z_t, C)`.
#[derive(Clone, Debug)]
pub struct Baselines {
    pub params: ParamSet,
    high: Mlp,
    low: Mlp,
    num_cells: usize,
    num_options: usize,
    ctx_dim: usize,
    opt: Adam,
}

impl Baselines {
    pub fn new<R: RngCore + ?Sized>(
        num_cells: usize,
        num_options: usize,
        ctx_dim: usize,
        hidden: &[usize],
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = ParamSet::new();
        let w = num_cells + num_options + ctx_dim;
        let high = Mlp::new(&mut params, "base.high", w, hidden, 1, true, rng)?;
        let low = Mlp::new(&mut params, "base.low", w, hidden, 1, true, rng)?;
        Ok(Baselines { params, high, low, num_cells, num_options, ctx_dim, opt: Adam::new(lr) })
    }

    fn rows(&self, trajs: &[&HierTrajectory], shift: usize) -> Rc<SparseRows> {
        let mut sp = SparseRows::new(self.num_cells + self.num_options + self.ctx_dim);
        for tr in trajs {
            let c = tr.net_context(self.ctx_dim);
            for t in 1..=tr.len() {
                let mut row = vec![(tr.states[t - 1], 1.0), (self.num_cells + tr.options[t - 1 + shift], 1.0)];
                let off = self.num_cells + self.num_options;
                row.extend(c.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(k, &v)| (off + k, v)));
                sp.push_row(row);
            }
        }
        Rc::new(sp)
    }

    /// Baseline values for every step, trajectory-major, each `[steps]`.
    pub fn values(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> (Var, Var) {
        let hi = self.high.forward(g, p, &Input::Sparse(self.rows(trajs, 0)));
        let lo = self.low.forward(g, p, &Input::Sparse(self.rows(trajs, 1)));
        let n = g.value(hi).rows();
        (g.reshape(hi, &[n]), g.reshape(lo, &[n]))
    }

    pub fn predict(&self, trajs: &[&HierTrajectory]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new();
        let (h, l) = self.values(&mut g, &self.params, trajs);
        (g.value(h).data().to_vec(), g.value(l).data().to_vec())
    }

    fn mse_graph(&self, g: &mut Graph, trajs: &[&HierTrajectory], targets: &[f64]) -> Var {
        let (h, l) = self.values(g, &self.params, trajs);
        let y = g.constant(Tensor::from_parts(vec![targets.len()], targets.to_vec()));
        let dh = g.sub(h, y);
        let dl = g.sub(l, y);
        let sh = g.mul(dh, dh);
        let sl = g.mul(dl, dl);
        let s = g.add(sh, sl);
        g.mean(s)
    }

    /// `fit_baselines`: full-batch Adam regression of both heads onto the
    /// flattened returns. Returns the loss after the last step (or the
    /// current loss when `steps` is 0).
    pub fn fit(&mut self, trajs: &[&HierTrajectory], targets: &[f64], steps: usize) -> Result<f64> {
        if trajs.is_empty() {
            return Err(Error::contract("fit_baselines on an empty batch"));
        }
        for _ in 0..steps {
            let mut g = Graph::new();
            let l = self.mse_graph(&mut g, trajs, targets);
            let grads = g.backward(l)?;
            self.opt.step(&mut self.params, &grads);
        }
        let mut g = Graph::new();
        let l = self.mse_graph(&mut g, trajs, targets);
        Ok(g.value(l).item())
    }
}

/// Flattened per-step advantages, trajectory-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Advantages {
    pub high: Vec<f64>,
    pub low: Vec<f64>,
}

pub fn flatten_returns(tables: &[ReturnTable]) -> Vec<f64> {
    tables.iter().flat_map(|t| t.ret.iter().copied()).collect()
}

fn standardize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = math::sqrt(var);
    for x in xs.iter_mut() {
        *x -= mean;
        if sd > 1e-12 {
            *x /= sd;
        }
    }
}

pub fn compute_advantages(
    tables: &[ReturnTable],
    baselines: &Baselines,
    trajs: &[&HierTrajectory],
    standardize_batch: bool,
) -> Advantages {
    let ret = flatten_returns(tables);
    let (bh, bl) = baselines.predict(trajs);
    let mut high: Vec<f64> = ret.iter().zip(&bh).map(|(r, b)| r - b).collect();
    let mut low: Vec<f64> = ret.iter().zip(&bl).map(|(r, b)| r - b).collect();
    if standardize_batch {
        standardize(&mut high);
        standardize(&mut low);
    }
    Advantages { high, low }
}

/// Returns for each trajectory with the given per-step imitation rewards
/// and (optionally) the posterior terms.
pub fn returns_for(
    trajs: &[&HierTrajectory],
    r_il: &[Vec<f64>],
    r_mi: Option<&[f64]>,
    log_option_post: Option<&[Vec<f64>]>,
    w: &ObjectiveWeights,
) -> Result<Vec<ReturnTable>> {
    let mut out = Vec::with_capacity(trajs.len());
    for (k, tr) in trajs.iter().enumerate() {
        let inp = ReturnInputs {
            r_mi: r_mi.map(|v| v[k]),
            log_option_post: log_option_post.map(|v| v[k].clone()).unwrap_or_default(),
            logp_high: tr.logp_high.clone(),
            r_il: r_il[k].clone(),
        };
        out.push(assemble_returns(&inp, w)?);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoLosses {
    pub loss_high: f64,
    pub loss_low: f64,
}

/// Surrogate objective graph `(high, low)`: each the mean over trajectories
/// of the per-step clipped surrogate sums. `adv` entries are indexed like
/// the flattened steps of `trajs`.
pub fn surrogate_graph(
    g: &mut Graph,
    policy: &HierPolicy,
    trajs: &[&HierTrajectory],
    adv_high: &[f64],
    adv_low: &[f64],
    clip: f64,
) -> (Var, Var) {
    let (lh, la) = policy.net.step_logprobs(g, &policy.params, trajs);
    let old_h: Vec<f64> = trajs.iter().flat_map(|t| t.logp_high.iter().copied()).collect();
    let old_l: Vec<f64> = trajs.iter().flat_map(|t| t.logp_low.iter().copied()).collect();
    assert!(old_h.len() == adv_high.len(), "surrogate: behaviour log-probs missing");
    let b = trajs.len() as f64;
    let oh = g.constant(Tensor::from_parts(vec![old_h.len()], old_h));
    let ol = g.constant(Tensor::from_parts(vec![old_l.len()], old_l));
    let rh = g.sub(lh, oh);
    let rl = g.sub(la, ol);
    let sh = g.clipped_surrogate(rh, adv_high.into(), clip);
    let sl = g.clipped_surrogate(rl, adv_low.into(), clip);
    let th = g.sum(sh);
    let tl = g.sum(sl);
    (g.scale(th, 1.0 / b), g.scale(tl, 1.0 / b))
}

/// Ascent gradient of the combined surrogate on `trajs`.
pub fn surrogate_gradient(policy: &HierPolicy, trajs: &[&HierTrajectory], adv: &Advantages, clip: f64) -> Result<Grads> {
    let mut g = Graph::new();
    let (h, l) = surrogate_graph(&mut g, policy, trajs, &adv.high, &adv.low, clip);
    let s = g.add(h, l);
    g.backward(s)
}

fn gather(adv: &[f64], offsets: &[usize], trajs: &[&HierTrajectory], pick: &[usize]) -> Vec<f64> {
    pick.iter().flat_map(|&i| adv[offsets[i]..offsets[i] + trajs[i].len()].iter().copied()).collect()
}

/// `ppo_update`: `epochs` passes of shuffled minibatch clipped-surrogate
/// ascent. Returns the losses (negated surrogates) of the last minibatch.
pub fn ppo_update(
    policy: &mut HierPolicy,
    opt: &mut Adam,
    trajs: &[&HierTrajectory],
    adv: &Advantages,
    cfg: &PpoConfig,
    rng: &mut Stream,
) -> Result<PpoLosses> {
    cfg.validate()?;
    let mut offsets = Vec::with_capacity(trajs.len());
    let mut acc = 0;
    for t in trajs {
        offsets.push(acc);
        acc += t.len();
    }
    if acc != adv.high.len() || acc != adv.low.len() {
        return Err(Error::contract(format!("{} steps but {} advantages", acc, adv.high.len())));
    }
    let mut order: Vec<usize> = (0..trajs.len()).collect();
    let mut losses = PpoLosses::default();
    for _ in 0..cfg.epochs {
        rng::shuffle(rng, &mut order);
        for chunk in order.chunks(cfg.minibatch) {
            let mb: Vec<&HierTrajectory> = chunk.iter().map(|&i| trajs[i]).collect();
            let ah = gather(&adv.high, &offsets, trajs, chunk);
            let al = gather(&adv.low, &offsets, trajs, chunk);
            let mut g = Graph::new();
            let (h, l) = surrogate_graph(&mut g, policy, &mb, &ah, &al, cfg.clip);
            losses = PpoLosses { loss_high: -g.value(h).item(), loss_low: -g.value(l).item() };
            let s = g.add(h, l);
            let loss = g.neg(s);
            let grads = g.backward(loss)?;
            opt.step(&mut policy.params, &grads);
        }
    }
    Ok(losses)
}

/// Copies the low level and `W_C` of `source` into `policy`, leaving the
/// high level as initialized. Returns the number of tensors copied.
pub fn transfer_init(policy: &mut HierPolicy, source: &ParamSet) -> Result<usize> {
    policy.params.copy_matching(source, HierPolicy::is_transferable)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlCurve {
    /// Mean environment return of the sampled trajectories per episode.
    pub mean_returns: Vec<f64>,
    /// Whether the greedy evaluation rollout after each episode reached the goal.
    pub greedy_success: Vec<bool>,
}

impl RlCurve {
    /// 1-based episode of the first greedy success, or `cap + 1`.
    pub fn episodes_to_first_success(&self) -> usize {
        self.greedy_success.iter().position(|&s| s).map_or(self.greedy_success.len() + 1, |i| i + 1)
    }
}

/// `hppo_rl`: HPPO on environment rewards, `Ret_t = Σ_{i ≥ t} r^{i−1}`.
pub fn hppo_rl(policy: &mut HierPolicy, spec: &TaskSpec, cfg: &PpoConfig, episodes: usize, seed: u64) -> Result<RlCurve> {
    cfg.validate()?;
    let pcfg = policy.cfg().clone();
    let mut init = rng::derived(seed, rng::OFFSET_INIT, 1);
    let mut base = Baselines::new(pcfg.num_cells, pcfg.num_options, pcfg.ctx_dim, &pcfg.hidden, cfg.lr_baseline, &mut init)?;
    let mut opt = Adam::new(cfg.lr_policy);
    let mut mb_rng = rng::derived(seed, rng::OFFSET_MINIBATCH, 0);
    let mut task_rng = rng::derived(seed, rng::OFFSET_ENV, 0);
    let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 };
    let mut curve = RlCurve { mean_returns: Vec::new(), greedy_success: Vec::new() };
    for ep in 0..episodes {
        let contexts: Vec<TaskContext> = (0..cfg.trajectories).map(|_| spec.sample_task(&mut task_rng)).collect();
        let mut rngs: Vec<Stream> = (0..cfg.trajectories)
            .map(|i| rng::derived(seed, rng::OFFSET_POLICY, (ep * cfg.trajectories + i) as u64))
            .collect();
        let batch = rollout_batch(policy, spec, &contexts, &mut rngs, SampleMode::Stochastic)?;
        let refs: Vec<&HierTrajectory> = batch.iter().collect();
        let r_il: Vec<Vec<f64>> = batch.iter().map(|t| t.env_rewards.clone()).collect();
        let tables = returns_for(&refs, &r_il, None, None, &w)?;
        let adv = compute_advantages(&tables, &base, &refs, cfg.standardize);
        base.fit(&refs, &flatten_returns(&tables), cfg.baseline_steps)?;
        ppo_update(policy, &mut opt, &refs, &adv, cfg, &mut mb_rng)?;
        let mean = batch.iter().map(|t| t.total_env_reward()).sum::<f64>() / batch.len() as f64;
        curve.mean_returns.push(mean);
        let c = spec.sample_task(&mut rng::derived(seed, rng::OFFSET_ENV, 1));
        let mut r = rng::derived(seed, rng::OFFSET_POLICY, u64::MAX);
        let greedy = rollout(policy, spec, &c, &mut r, SampleMode::Argmax)?;
        curve.greedy_success.push(greedy.total_env_reward() > 0.0);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_moments() {
        let mut xs = vec![1.0, 4.0, -2.0, 7.5, 0.25];
        standardize(&mut xs);
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        assert!(m.abs() < 1e-9 && (v.sqrt() - 1.0).abs() < 1e-9);
        let mut zs = vec![3.0; 4];
        standardize(&mut zs);
        assert_eq!(zs, vec![0.0; 4]);
    }

    #[test]
    fn first_success_counting() {
        let c = RlCurve { mean_returns: vec![0.0; 3], greedy_success: vec![false, true, true] };
        assert_eq!(c.episodes_to_first_success(), 2);
        let c = RlCurve { mean_returns: vec![0.0; 3], greedy_success: vec![false; 3] };
        assert_eq!(c.episodes_to_first_success(), 4);
    }
}
