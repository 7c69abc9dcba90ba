//! Exact enumeration on small tabular tasks: the joint distribution over
//! `(C, Z_{0:T}, X_{0:T})`, information quantities, Bayes posteriors, exact
//! objective gradients and the discriminator optimum.
//!
//! Only fixed-horizon deterministic tasks with a discrete context qualify.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::discrim::{Discriminator, ExtendedPairs};
use crate::env::{ContextKind, TaskContext, TaskSpec};
use crate::error::{Error, Result};
use crate::expert;
use crate::graph::{Graph, Grads};
use crate::math;
use crate::objective::ObjectiveWeights;
use crate::policy::{HierPolicy, HierTrajectory, DUMMY_OPTION};
use crate::posterior::{OptionPosteriorNet, PosteriorPair};

pub const ENUMERATION_BUDGET: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct JointEntry {
    /// Behaviour log-probs hold the enumerating policy's per-step values.
    pub traj: HierTrajectory,
    /// Joint probability including the context prior.
    pub prob: f64,
    pub log_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointTable {
    pub entries: Vec<JointEntry>,
    pub prior: Vec<f64>,
    pub num_options: usize,
    pub horizon: usize,
}

fn check_enumerable(spec: &TaskSpec, per_context: usize, budget: usize) -> Result<usize> {
    let n = match spec.context {
        ContextKind::Discrete(n) => n,
        ContextKind::Continuous(_) => return Err(Error::contract("enumeration needs a discrete context")),
    };
    if spec.sparse {
        return Err(Error::contract("enumeration needs a fixed horizon"));
    }
    let mut needed: usize = n;
    for _ in 0..spec.horizon {
        needed = needed.saturating_mul(per_context);
    }
    if needed > budget {
        return Err(Error::Budget { needed: needed as u64, budget: budget as u64 });
    }
    Ok(n)
}

/// `enumerate_joint` with the default budget.
pub fn enumerate_joint(spec: &TaskSpec, policy: &HierPolicy) -> Result<JointTable> {
    enumerate_joint_with_budget(spec, policy, ENUMERATION_BUDGET)
}

pub fn enumerate_joint_with_budget(spec: &TaskSpec, policy: &HierPolicy, budget: usize) -> Result<JointTable> {
    let nz = policy.cfg().num_options;
    let na = spec.num_actions;
    let nc = check_enumerable(spec, nz * na, budget)?;
    let dim = policy.cfg().ctx_dim;
    let mut entries = Vec::new();
    for ci in 0..nc {
        let c = TaskContext::discrete(ci, nc)?;
        let s0 = spec.reset(&c)?;
        let root = HierTrajectory {
            context: c.clone(),
            states: vec![s0.pos],
            options: vec![DUMMY_OPTION],
            actions: Vec::new(),
            logp_high: Vec::new(),
            logp_low: Vec::new(),
            env_rewards: Vec::new(),
        };
        let mut frontier = vec![(root, s0, -math::ln(nc as f64))];
        for _ in 0..spec.horizon {
            let mut next = Vec::with_capacity(frontier.len() * nz * na);
            for (tr, s, lp) in frontier {
                let ctx = tr.net_context(dim).to_vec();
                let hp = policy.high_dist(s.pos, &ctx, *tr.options.last().expect("Z_0"));
                for (z, &pz) in hp.iter().enumerate() {
                    let lp_ = policy.low_dist(s.pos, &ctx, z);
                    for (a, &pa) in lp_.iter().enumerate() {
                        let (s2, r, _) = spec.step(&s, a)?;
                        let mut t2 = tr.clone();
                        t2.options.push(z);
                        t2.actions.push(a);
                        t2.states.push(s2.pos);
                        t2.logp_high.push(math::ln(pz));
                        t2.logp_low.push(math::ln(pa));
                        t2.env_rewards.push(r);
                        next.push((t2, s2, lp + math::ln(pz) + math::ln(pa)));
                    }
                }
            }
            frontier = next;
        }
        for (traj, _, log_prob) in frontier {
            entries.push(JointEntry { traj, prob: math::exp(log_prob), log_prob });
        }
    }
    Ok(JointTable { entries, prior: vec![1.0 / nc as f64; nc], num_options: nz, horizon: spec.horizon })
}

/// The scripted expert as a joint table: one deterministic trajectory per
/// context, carrying its direction-label options.
pub fn expert_table(spec: &TaskSpec, num_options: usize) -> Result<JointTable> {
    let nc = check_enumerable(spec, 1, ENUMERATION_BUDGET)?;
    let mut entries = Vec::with_capacity(nc);
    for ci in 0..nc {
        let c = TaskContext::discrete(ci, nc)?;
        let (d, _) = expert::expert_episode(spec, &c)?;
        let traj = d.to_trajectory(spec)?;
        traj.validate(num_options)?;
        entries.push(JointEntry { traj, prob: 1.0 / nc as f64, log_prob: -math::ln(nc as f64) });
    }
    Ok(JointTable { entries, prior: vec![1.0 / nc as f64; nc], num_options, horizon: spec.horizon })
}

impl JointTable {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.prob).sum()
    }

    pub fn trajectories(&self) -> Vec<&HierTrajectory> {
        self.entries.iter().map(|e| &e.traj).collect()
    }

    fn context_of(e: &JointEntry) -> usize {
        e.traj.context.index().expect("discrete context")
    }

    pub fn prior_entropy(&self) -> f64 {
        math::entropy(&self.prior)
    }
}

/// Observation key: the action sequence (states follow deterministically).
fn x_key(tr: &HierTrajectory, t: usize) -> Vec<usize> {
    tr.actions[..t].to_vec()
}

/// `I(X_{0:T}; C)` by direct summation.
pub fn exact_mutual_info(table: &JointTable) -> f64 {
    let nc = table.prior.len();
    let mut px: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for e in &table.entries {
        px.entry(x_key(&e.traj, table.horizon)).or_insert_with(|| vec![0.0; nc])[JointTable::context_of(e)] += e.prob;
    }
    let mut mi = 0.0;
    for pc in px.values() {
        let tot: f64 = pc.iter().sum();
        for (c, &p) in pc.iter().enumerate() {
            if p > 0.0 {
                mi += p * (math::ln(p / tot) - math::ln(table.prior[c]));
            }
        }
    }
    mi
}

type Prefix = (usize, Vec<usize>, Vec<usize>);

fn prefix(e: &JointEntry, t: usize, with_z_t: bool, with_x: bool) -> Prefix {
    let zs = e.traj.options[1..if with_z_t { t + 1 } else { t }].to_vec();
    let xs = if with_x { x_key(&e.traj, t) } else { Vec::new() };
    (JointTable::context_of(e), zs, xs)
}

fn marginal(table: &JointTable, t: usize, with_z_t: bool, with_x: bool) -> BTreeMap<Prefix, f64> {
    let mut m = BTreeMap::new();
    for e in &table.entries {
        *m.entry(prefix(e, t, with_z_t, with_x)).or_insert(0.0) += e.prob;
    }
    m
}

/// `I(X → Z | C) = Σ_t I(X_{0:t}; Z_t | Z_{0:t−1}, C)`.
pub fn exact_directed_info(table: &JointTable) -> f64 {
    let mut di = 0.0;
    for t in 1..=table.horizon {
        let num_x = marginal(table, t, true, true);
        let den_x = marginal(table, t, false, true);
        let num = marginal(table, t, true, false);
        let den = marginal(table, t, false, false);
        for (k, &p) in &num_x {
            if p <= 0.0 {
                continue;
            }
            let kx = (k.0, k.1[..t - 1].to_vec(), k.2.clone());
            let kz = (k.0, k.1.clone(), Vec::new());
            let kd = (k.0, k.1[..t - 1].to_vec(), Vec::new());
            let post = p / den_x[&kx];
            let pri = num[&kz] / den[&kd];
            di += p * (math::ln(post) - math::ln(pri));
        }
    }
    di
}

/// Bayes-exact posteriors.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactPosteriors {
    /// `P(C | X_{0:T})` keyed by the action sequence.
    pub task: BTreeMap<Vec<usize>, Vec<f64>>,
    /// `P(Z_t | X_{0:t}, Z_{1:t−1}, C)` keyed by `(c, Z_{1:t−1}, A_{0:t−1})`.
    pub option: BTreeMap<Prefix, Vec<f64>>,
}

impl ExactPosteriors {
    pub fn task_logprob(&self, tr: &HierTrajectory) -> f64 {
        let c = tr.context.index().expect("discrete context");
        math::ln(self.task[&tr.actions][c])
    }

    /// `log P(Z_t | ·)` for `t = 1..T`.
    pub fn option_logprobs(&self, tr: &HierTrajectory) -> Vec<f64> {
        let c = tr.context.index().expect("discrete context");
        (1..=tr.len())
            .map(|t| {
                let key = (c, tr.options[1..t].to_vec(), tr.actions[..t].to_vec());
                math::ln(self.option[&key][tr.options[t]])
            })
            .collect()
    }
}

pub fn exact_posteriors(table: &JointTable) -> ExactPosteriors {
    let nc = table.prior.len();
    let nz = table.num_options;
    let mut task: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    for e in &table.entries {
        task.entry(x_key(&e.traj, table.horizon)).or_insert_with(|| vec![0.0; nc])[JointTable::context_of(e)] += e.prob;
    }
    for v in task.values_mut() {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= s);
    }
    let mut option: BTreeMap<Prefix, Vec<f64>> = BTreeMap::new();
    for t in 1..=table.horizon {
        for e in &table.entries {
            let k = prefix(e, t, false, true);
            option.entry(k).or_insert_with(|| vec![0.0; nz])[e.traj.options[t]] += e.prob;
        }
    }
    for v in option.values_mut() {
        let s: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= s);
    }
    ExactPosteriors { task, option }
}

/// Per-entry `log P_ψ(C | X)` under the posterior network.
pub fn task_logprobs(table: &JointTable, pair: &PosteriorPair) -> Result<Vec<f64>> {
    let net = pair.task.as_ref().ok_or_else(|| Error::contract("no task posterior"))?;
    let mut g = Graph::new();
    let v = net.logprob(&mut g, &pair.task_params, &table.trajectories())?;
    Ok(g.value(v).data().to_vec())
}

/// Per-entry, per-step `log P_ω(Z_t | ·)`.
pub fn option_logprobs(table: &JointTable, pair: &PosteriorPair) -> Result<Vec<Vec<f64>>> {
    let refs = table.trajectories();
    let mut g = Graph::new();
    let v = pair.option.logprob_seq(&mut g, &pair.option_params, &refs)?;
    Ok(transpose_time_major(g.value(v).data(), refs.len()))
}

fn transpose_time_major(v: &[f64], batch: usize) -> Vec<Vec<f64>> {
    OptionPosteriorNet::split_time_major(v, batch)
}

/// Exact-expectation `L^MI = H(C) + E[log P_ψ(C|X)]`.
pub fn exact_l_mi(table: &JointTable, pair: &PosteriorPair) -> Result<f64> {
    let lp = task_logprobs(table, pair)?;
    Ok(table.prior_entropy() + table.entries.iter().zip(&lp).map(|(e, l)| e.prob * l).sum::<f64>())
}

/// Exact-expectation `L^DI = E[Σ_t log P_ω(Z_t|·) − log π_θ(Z_t|·)]`.
pub fn exact_l_di(table: &JointTable, pair: &PosteriorPair) -> Result<f64> {
    let lo = option_logprobs(table, pair)?;
    Ok(table
        .entries
        .iter()
        .zip(&lo)
        .map(|(e, l)| e.prob * l.iter().zip(&e.traj.logp_high).map(|(a, b)| a - b).sum::<f64>())
        .sum())
}

/// Per-step imitation rewards of every entry under `disc`, scored with
/// the enumerating policy.
pub fn entry_rewards(table: &JointTable, disc: &Discriminator, policy: &HierPolicy) -> Vec<Vec<f64>> {
    let refs = table.trajectories();
    let pairs = ExtendedPairs::from_trajectories(&refs, policy, disc.cfg.ctx_dim);
    let r = disc.rewards(&pairs);
    let mut out = Vec::with_capacity(refs.len());
    let mut k = 0;
    for tr in &refs {
        out.push(r[k..k + tr.len()].to_vec());
        k += tr.len();
    }
    out
}

/// Per-trajectory objective value `F(τ)` whose expectation is `L`:
/// `α₁ log P_ψ(C|X) + α₂ Σ_t (log P_ω − log π_θ) + α₃ Σ_t R_IL^{t−1}`.
pub fn objective_values(
    table: &JointTable,
    pair: Option<&PosteriorPair>,
    r_il: Option<&[Vec<f64>]>,
    w: &ObjectiveWeights,
) -> Result<Vec<f64>> {
    let n = table.entries.len();
    let mut f = vec![0.0; n];
    if w.alpha_mi != 0.0 {
        let lp = task_logprobs(table, pair.ok_or_else(|| Error::contract("alpha_mi needs posteriors"))?)?;
        f.iter_mut().zip(&lp).for_each(|(v, l)| *v += w.alpha_mi * l);
    }
    if w.alpha_di != 0.0 {
        let lo = option_logprobs(table, pair.ok_or_else(|| Error::contract("alpha_di needs posteriors"))?)?;
        for ((v, l), e) in f.iter_mut().zip(&lo).zip(&table.entries) {
            *v += w.alpha_di * l.iter().zip(&e.traj.logp_high).map(|(a, b)| a - b).sum::<f64>();
        }
    }
    if w.alpha_il != 0.0 {
        let r = r_il.ok_or_else(|| Error::contract("alpha_il needs rewards"))?;
        f.iter_mut().zip(r).for_each(|(v, rs)| *v += w.alpha_il * rs.iter().sum::<f64>());
    }
    Ok(f)
}

/// `exact_gradient`: reverse-mode gradient of `Σ_τ p(τ) F(τ)` with `F`
/// held fixed, over the policy parameters. Because the score function has
/// zero mean, this equals the full gradient of `L` even where `F` itself
/// depends on the policy.
pub fn exact_gradient(table: &JointTable, policy: &HierPolicy, values: &[f64]) -> Result<Grads> {
    if values.len() != table.entries.len() {
        return Err(Error::contract(format!("{} values for {} entries", values.len(), table.entries.len())));
    }
    let refs = table.trajectories();
    let t = table.horizon;
    let b = refs.len();
    let mut g = Graph::new();
    let (lh, la) = policy.net.step_logprobs(&mut g, &policy.params, &refs);
    let s = g.add(lh, la);
    let m = g.reshape(s, &[b, t]);
    let lp = g.row_sum(m);
    let p_traj = g.exp(lp);
    let weights: Vec<f64> = table.entries.iter().zip(values).map(|(e, v)| table.prior[JointTable::context_of(e)] * v).collect();
    let out = g.weighted_sum(p_traj, weights.into());
    g.backward(out)
}

/// Extended-pair key `(c, S_t, Z_t, Z_{t+1}, A_t)`.
pub type PairKey = (usize, usize, usize, usize, usize);

/// Normalized occupancy `Σ_t P(pair at t) / T` over extended pairs.
pub fn occupancy(table: &JointTable) -> BTreeMap<PairKey, f64> {
    let mut m = BTreeMap::new();
    for e in &table.entries {
        let c = JointTable::context_of(e);
        let tr = &e.traj;
        for t in 0..tr.len() {
            *m.entry((c, tr.states[t], tr.options[t], tr.options[t + 1], tr.actions[t])).or_insert(0.0) +=
                e.prob / table.horizon as f64;
        }
    }
    m
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairOptimum {
    pub occ_expert: f64,
    pub occ_policy: f64,
    pub d_star: f64,
}

/// `exact_disc_optimum`: `D* = ρ_E / (ρ_E + ρ_π)` for every pair either
/// side visits.
pub fn exact_disc_optimum(policy_table: &JointTable, expert: &JointTable) -> BTreeMap<PairKey, PairOptimum> {
    let pe = occupancy(expert);
    let pp = occupancy(policy_table);
    let mut out = BTreeMap::new();
    for k in pe.keys().chain(pp.keys()) {
        let e = pe.get(k).copied().unwrap_or(0.0);
        let p = pp.get(k).copied().unwrap_or(0.0);
        out.insert(*k, PairOptimum { occ_expert: e, occ_policy: p, d_star: e / (e + p) });
    }
    out
}

/// Extended pairs for a set of keys, scored by the current policy.
pub fn pairs_for_keys(keys: &[PairKey], policy: &HierPolicy, spec: &TaskSpec, ctx_dim: usize) -> Result<ExtendedPairs> {
    let nc = spec.context.dim();
    let mut out = ExtendedPairs::default();
    for &(c, s, z, zn, a) in keys {
        let ctx = TaskContext::discrete(c, nc)?;
        let net_ctx: &[f64] = if ctx_dim == 0 { &[] } else { &ctx.value };
        let pol_ctx: &[f64] = if policy.cfg().ctx_dim == 0 { &[] } else { &ctx.value };
        let ph = policy.high_dist(s, pol_ctx, z);
        let pl = policy.low_dist(s, pol_ctx, zn);
        let sn = spec.next_pos(s, a);
        out.push(s, z, zn, a, sn, net_ctx, math::ln(ph[zn]) + math::ln(pl[a]));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::PolicyConfig;
    use crate::rng;

    #[test]
    fn budget_refusal() {
        let spec = TaskSpec::tinychain();
        let p = HierPolicy::new(PolicyConfig::for_spec(&spec, 2, true), &mut rng::stream(1)).unwrap();
        assert!(matches!(enumerate_joint_with_budget(&spec, &p, 100), Err(Error::Budget { needed: 128, budget: 100 })));
        assert_eq!(enumerate_joint(&spec, &p).unwrap().entries.len(), 128);
    }
}
