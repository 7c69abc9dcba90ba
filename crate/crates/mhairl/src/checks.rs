//! Numerical verification suites on TinyChain and small random networks.
//! Shared by the `oracle-check` command and the acceptance harness.

use std::collections::HashMap;

use mhairl_core::discrim::{DiscConfig, DiscMode, Discriminator, ExtendedPairs};
use mhairl_core::env::{ContextKind, TaskContext, TaskSpec};
use mhairl_core::gradcheck::{self, Report};
use mhairl_core::graph::{reverse_grad, Graph, Var};
use mhairl_core::hppo::{self, Advantages, Baselines};
use mhairl_core::objective::ObjectiveWeights;
use mhairl_core::oracle::{self, JointTable};
use mhairl_core::policy::{rollout_batch, HierPolicy, HierTrajectory, PolicyConfig, Query, SampleMode};
use mhairl_core::posterior::{PosteriorConfig, PosteriorPair};
use mhairl_core::rng::{self, Stream};
use mhairl_core::{ParamSet, Tensor};

use crate::error::Result;

pub const GRADCHECK_TOL: f64 = 1e-5;
/// Step of the fourth-order central stencil used for whole networks. Their
/// outputs reach 1e2 in magnitude, where the two-point stencil's rounding
/// error alone exceeds the tolerance on small gradients.
const FD_STEP: f64 = 1e-3;

fn randomize(p: &mut ParamSet, r: &mut Stream, scale: f64) {
    let flat: Vec<f64> = p.flatten().iter().map(|_| rng::uniform_range(r, -scale, scale)).collect();
    p.unflatten(&flat);
}

/// Fourth-order central differences over the parameters whose names pass `keep`; the
/// others stay fixed. `build` must return a scalar node.
pub fn check_named<F>(params: &ParamSet, keep: impl Fn(&str) -> bool, build: F) -> Result<Report>
where
    F: Fn(&ParamSet) -> (Graph, Var),
{
    let (g, out) = build(params);
    let grads = g.backward(out)?;
    let mut work = params.clone();
    let mut report = Report::default();
    let eval = |p: &ParamSet| {
        let (g, o) = build(p);
        g.value(o).item()
    };
    for (id, name, t) in params.iter() {
        if !keep(name) {
            continue;
        }
        let analytic: Vec<f64> = grads.get(id).map_or_else(|| vec![0.0; t.len()], |g| g.data().to_vec());
        for (off, &a) in analytic.iter().enumerate() {
            let orig = t.data()[off];
            let mut at = |d: f64| {
                work.value_mut(id).data_mut()[off] = orig + d;
                let v = eval(&work);
                work.value_mut(id).data_mut()[off] = orig;
                v
            };
            let h = FD_STEP;
            let numeric = (8.0 * (at(h) - at(-h)) - (at(2.0 * h) - at(-2.0 * h))) / (12.0 * h);
            let e = gradcheck::rel_err(a, numeric);
            if e > report.max_rel_err {
                report.max_rel_err = e;
                report.worst_param = name.to_string();
                report.worst_offset = off;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

fn weights(r: &mut Stream, n: usize) -> std::rc::Rc<[f64]> {
    (0..n).map(|_| rng::normal(r)).collect()
}

fn random_trajs(r: &mut Stream, n: usize, t: usize, cells: usize, options: usize, actions: usize, ctx: ContextKind) -> Vec<HierTrajectory> {
    (0..n)
        .map(|_| {
            let context = match ctx {
                ContextKind::Discrete(k) => TaskContext::discrete(rng::below(r, k), k).expect("k >= 1"),
                ContextKind::Continuous(d) => {
                    TaskContext::continuous((0..d).map(|_| rng::normal(r)).collect()).expect("finite")
                }
            };
            let mut options_seq = vec![0];
            options_seq.extend((0..t).map(|_| rng::below(r, options)));
            HierTrajectory {
                context,
                states: (0..=t).map(|_| rng::below(r, cells)).collect(),
                options: options_seq,
                actions: (0..t).map(|_| rng::below(r, actions)).collect(),
                logp_high: vec![0.0; t],
                logp_low: vec![0.0; t],
                env_rewards: vec![0.0; t],
            }
        })
        .collect()
}

fn small_policy_cfg(ctx_dim: usize) -> PolicyConfig {
    PolicyConfig { num_cells: 5, ctx_dim, num_actions: 3, num_options: 3, embed: 4, hidden: vec![5], heads: 2 }
}

fn small_posterior_cfg(context: ContextKind) -> PosteriorConfig {
    PosteriorConfig {
        num_cells: 5,
        num_actions: 3,
        num_options: 3,
        context,
        option_uses_context: true,
        hidden: 3,
        head_hidden: 4,
    }
}

/// Finite-difference checks of every network block at `points` random
/// parameter draws. Reduced widths keep the suite fast; the code paths are
/// the same as at full size.
pub fn network_gradchecks(points: usize, seed: u64) -> Result<Vec<(String, Report)>> {
    let mut out: Vec<(String, Report)> = Vec::new();
    let mut add = |name: &str, rep: Report| match out.iter_mut().find(|(n, _)| n == name) {
        Some((_, r)) => r.merge(&rep),
        None => out.push((name.to_string(), rep)),
    };
    for pt in 0..points {
        let mut r = rng::derived(seed, 100, pt as u64);

        // Policy heads. The low level sees W_C as a constant, so its check
        // covers only the low-level weights.
        let mut pol = HierPolicy::new(small_policy_cfg(2), &mut r)?;
        randomize(&mut pol.params, &mut r, 1.0);
        let ctxs: Vec<Vec<f64>> = (0..4).map(|_| vec![rng::normal(&mut r), rng::normal(&mut r)]).collect();
        let rows: Vec<(usize, usize)> = (0..4).map(|_| (rng::below(&mut r, 5), rng::below(&mut r, 3))).collect();
        let wh = weights(&mut r, 12);
        let net = pol.net.clone();
        let queries = |ps: &ParamSet, high: bool| {
            let qs: Vec<Query> =
                rows.iter().zip(&ctxs).map(|(&(pos, option), c)| Query { pos, ctx: c, option }).collect();
            let mut g = Graph::new();
            let l = if high { net.high_logits(&mut g, ps, &qs) } else { net.low_logits(&mut g, ps, &qs) };
            let o = g.weighted_sum(l, wh.clone());
            (g, o)
        };
        add("policy_high_head", check_named(&pol.params, |n| !n.starts_with("low."), |ps| queries(ps, true))?);
        add("policy_low_head", check_named(&pol.params, |n| n.starts_with("low."), |ps| queries(ps, false))?);
        let trajs = random_trajs(&mut r, 3, 3, 5, 3, 3, ContextKind::Continuous(2));
        let refs: Vec<&HierTrajectory> = trajs.iter().collect();
        let (w1, w2) = (weights(&mut r, 9), weights(&mut r, 9));
        add(
            "policy_step_logprobs",
            check_named(&pol.params, |n| n != "wc", |ps| {
                let mut g = Graph::new();
                let (lh, la) = net.step_logprobs(&mut g, ps, &refs);
                let a = g.weighted_sum(lh, w1.clone());
                let b = g.weighted_sum(la, w2.clone());
                let o = g.add(a, b);
                (g, o)
            })?,
        );

        // Posteriors.
        for (name, ctx) in [("task_posterior_discrete", ContextKind::Discrete(3)), ("task_posterior_gaussian", ContextKind::Continuous(2))] {
            let mut pair = PosteriorPair::new(small_posterior_cfg(ctx), true, 1e-3, &mut r)?;
            randomize(&mut pair.task_params, &mut r, 1.0);
            randomize(&mut pair.option_params, &mut r, 1.0);
            let trajs = random_trajs(&mut r, 3, 3, 5, 3, 3, ctx);
            let refs: Vec<&HierTrajectory> = trajs.iter().collect();
            let w = weights(&mut r, 3);
            let task = pair.task.clone().expect("task channel");
            add(
                name,
                check_named(&pair.task_params, |_| true, |ps| {
                    let mut g = Graph::new();
                    let v = task.logprob(&mut g, ps, &refs).expect("valid batch");
                    let o = g.weighted_sum(v, w.clone());
                    (g, o)
                })?,
            );
            let w = weights(&mut r, 9);
            let option = pair.option.clone();
            add(
                "option_posterior",
                check_named(&pair.option_params, |_| true, |ps| {
                    let mut g = Graph::new();
                    let v = option.logprob_seq(&mut g, ps, &refs).expect("valid batch");
                    let o = g.weighted_sum(v, w.clone());
                    (g, o)
                })?,
            );
        }

        // Discriminator in every mode: raw scores and the full loss.
        for (name, mode) in [
            ("disc_airl_raw", DiscMode::AirlRaw),
            ("disc_airl_state_only", DiscMode::AirlStateOnly { gamma: 0.9 }),
            ("disc_gail", DiscMode::Gail),
        ] {
            let cfg = DiscConfig { num_cells: 5, num_actions: 3, num_options: 3, ctx_dim: 2, hidden: vec![4, 3], mode };
            let mut d = Discriminator::new(cfg, 1e-3, &mut r)?;
            randomize(&mut d.params, &mut r, 1.0);
            let trajs = random_trajs(&mut r, 4, 2, 5, 3, 3, ContextKind::Continuous(2));
            let refs: Vec<&HierTrajectory> = trajs.iter().collect();
            let mut pairs = ExtendedPairs::from_trajectories(&refs, &pol, 2);
            pairs.policy_logprob.iter_mut().for_each(|v| *v = -rng::uniform_range(&mut r, 0.1, 3.0));
            let expert = pairs.select(&[0, 1, 2, 3]);
            let gen = pairs.select(&[4, 5, 6, 7]);
            let w = weights(&mut r, pairs.len());
            add(
                name,
                check_named(&d.params, |_| true, |ps| {
                    let mut g = Graph::new();
                    let s = d.score(&mut g, ps, &pairs);
                    let o = g.weighted_sum(s, w.clone());
                    (g, o)
                })?,
            );
            add(
                &format!("{name}_loss"),
                check_named(&d.params, |_| true, |ps| {
                    let mut g = Graph::new();
                    let o = d.loss_graph(&mut g, ps, &expert, &gen).expect("valid pairs");
                    (g, o)
                })?,
            );
        }

        // Baselines.
        let mut base = Baselines::new(5, 3, 2, &[4], 1e-3, &mut r)?;
        randomize(&mut base.params, &mut r, 1.0);
        let trajs = random_trajs(&mut r, 3, 3, 5, 3, 3, ContextKind::Continuous(2));
        let refs: Vec<&HierTrajectory> = trajs.iter().collect();
        let (w1, w2) = (weights(&mut r, 9), weights(&mut r, 9));
        let b2 = base.clone();
        add(
            "baselines",
            check_named(&base.params, |_| true, |ps| {
                let mut g = Graph::new();
                let (h, l) = b2.values(&mut g, ps, &refs);
                let a = g.weighted_sum(h, w1.clone());
                let b = g.weighted_sum(l, w2.clone());
                let o = g.add(a, b);
                (g, o)
            })?,
        );
    }
    Ok(out)
}

/// Primitive suite plus network suite.
pub fn full_gradcheck(points: usize, seed: u64) -> Result<Vec<(String, Report)>> {
    let mut out: Vec<(String, Report)> =
        gradcheck::primitive_suite(points, seed)?.into_iter().map(|(n, r)| (n.to_string(), r)).collect();
    out.extend(network_gradchecks(points, seed)?);
    Ok(out)
}

fn tiny_policy(spec: &TaskSpec, r: &mut Stream, scale: f64) -> Result<HierPolicy> {
    let mut cfg = PolicyConfig::for_spec(spec, 2, true);
    cfg.embed = 3;
    cfg.hidden = vec![4];
    cfg.heads = 1;
    let mut p = HierPolicy::new(cfg, r)?;
    randomize(&mut p.params, r, scale);
    Ok(p)
}

fn tiny_pair(spec: &TaskSpec, r: &mut Stream, scale: f64) -> Result<PosteriorPair> {
    let cfg = PosteriorConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: 2,
        context: spec.context,
        option_uses_context: true,
        hidden: 4,
        head_hidden: 4,
    };
    let mut pair = PosteriorPair::new(cfg, true, 1e-3, r)?;
    randomize(&mut pair.task_params, r, scale);
    randomize(&mut pair.option_params, r, scale);
    Ok(pair)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundsReport {
    pub draws: usize,
    /// `min (I(X;C) − L^MI)` over draws.
    pub min_slack_mi: f64,
    /// `min (I(X→Z|C) − L^DI)` over draws.
    pub min_slack_di: f64,
    /// `max |L^MI(Bayes posterior) − I(X;C)|`.
    pub bayes_gap: f64,
}

impl BoundsReport {
    pub fn passed(&self) -> bool {
        self.min_slack_mi >= -1e-9 && self.min_slack_di >= -1e-9 && self.bayes_gap <= 1e-9
    }
}

/// Exact-expectation lower bounds at random policy and posterior draws.
/// `fault` is added to every `L^MI`; nonzero values exist to exercise the
/// failure path.
pub fn lower_bounds(draws: usize, seed: u64, fault: f64) -> Result<BoundsReport> {
    let spec = TaskSpec::tinychain();
    let mut rep = BoundsReport { draws, min_slack_mi: f64::INFINITY, min_slack_di: f64::INFINITY, bayes_gap: 0.0 };
    for k in 0..draws {
        let mut r = rng::derived(seed, 200, k as u64);
        let policy = tiny_policy(&spec, &mut r, 2.0)?;
        let pair = tiny_pair(&spec, &mut r, 2.0)?;
        let table = oracle::enumerate_joint(&spec, &policy)?;
        let mi = oracle::exact_mutual_info(&table);
        let di = oracle::exact_directed_info(&table);
        let l_mi = oracle::exact_l_mi(&table, &pair)? + fault;
        let l_di = oracle::exact_l_di(&table, &pair)?;
        rep.min_slack_mi = rep.min_slack_mi.min(mi - l_mi);
        rep.min_slack_di = rep.min_slack_di.min(di - l_di);
        let exact = oracle::exact_posteriors(&table);
        let bayes = table.prior_entropy()
            + table.entries.iter().map(|e| e.prob * exact.task_logprob(&e.traj)).sum::<f64>()
            + fault;
        rep.bayes_gap = rep.bayes_gap.max((bayes - mi).abs());
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelReport {
    pub name: &'static str,
    /// Coordinates compared (all policy parameters).
    pub coords: usize,
    /// Coordinates with nonzero sample variance.
    pub random_coords: usize,
    /// Coordinates whose mean lies outside 3 standard errors of the target.
    pub outside: usize,
    pub max_abs_z: f64,
    /// Euclidean norm of the reference gradient.
    pub target_norm: f64,
}

impl ChannelReport {
    pub fn passed(&self) -> bool {
        self.outside == 0
    }

    /// Coordinates expected outside 3 SE by chance alone.
    pub fn expected_outside(&self) -> f64 {
        self.random_coords as f64 * 0.0027
    }
}

type PathKey = (usize, Vec<usize>, Vec<usize>);

fn path_key(t: &HierTrajectory) -> PathKey {
    (t.context.index().expect("discrete context"), t.options.clone(), t.actions.clone())
}

/// Per-trajectory values `g(τ)` are deterministic functions of the path, so
/// they are computed once per enumerated path and looked up for every
/// sampled trajectory.
fn per_entry_gradients(
    table: &JointTable,
    policy: &HierPolicy,
    adv: impl Fn(usize, &HierTrajectory) -> (Vec<f64>, Vec<f64>),
) -> Result<Vec<Vec<f64>>> {
    table
        .entries
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let (high, low) = adv(k, &e.traj);
            let g = hppo::surrogate_gradient(policy, &[&e.traj], &Advantages { high, low }, 0.2)?;
            Ok(g.flatten(&policy.params))
        })
        .collect()
}

/// Monte-Carlo check of the policy-gradient estimator at ratio 1 for each
/// objective channel alone and combined, and of the zero-mean baseline term.
/// The exact gradients are scaled by `1 + fault` before comparison.
pub fn unbiasedness(samples: usize, seed: u64, fault: f64) -> Result<Vec<ChannelReport>> {
    let spec = TaskSpec::tinychain();
    let mut r = rng::derived(seed, 300, 0);
    let policy = tiny_policy(&spec, &mut r, 1.0)?;
    let pair = tiny_pair(&spec, &mut r, 1.0)?;
    let dcfg = DiscConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: 2,
        ctx_dim: spec.context_dim(),
        hidden: vec![4],
        mode: DiscMode::AirlStateOnly { gamma: 0.9 },
    };
    let mut disc = Discriminator::new(dcfg, 1e-3, &mut r)?;
    randomize(&mut disc.params, &mut r, 1.0);
    let mut base = Baselines::new(spec.num_cells(), 2, spec.context_dim(), &[4], 1e-3, &mut r)?;
    randomize(&mut base.params, &mut r, 1.0);

    let table = oracle::enumerate_joint(&spec, &policy)?;
    let index: HashMap<PathKey, usize> = table.entries.iter().enumerate().map(|(k, e)| (path_key(&e.traj), k)).collect();
    let r_il = oracle::entry_rewards(&table, &disc, &policy);
    let task_lp = oracle::task_logprobs(&table, &pair)?;
    let opt_lp = oracle::option_logprobs(&table, &pair)?;

    let channels: [(&'static str, ObjectiveWeights); 4] = [
        ("mi", ObjectiveWeights { alpha_mi: 1.0, alpha_di: 0.0, alpha_il: 0.0 }),
        ("di", ObjectiveWeights { alpha_mi: 0.0, alpha_di: 1.0, alpha_il: 0.0 }),
        ("il", ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 }),
        ("combined", ObjectiveWeights { alpha_mi: 0.7, alpha_di: 0.3, alpha_il: 1.0 }),
    ];
    let mut per_entry: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    for (_, w) in &channels {
        let f = oracle::objective_values(&table, Some(&pair), Some(&r_il), w)?;
        let g = oracle::exact_gradient(&table, &policy, &f)?.flatten(&policy.params);
        targets.push(g.iter().map(|v| v * (1.0 + fault)).collect());
        per_entry.push(per_entry_gradients(&table, &policy, |k, tr| {
            let inp = mhairl_core::objective::ReturnInputs {
                r_mi: Some(task_lp[k]),
                log_option_post: opt_lp[k].clone(),
                logp_high: tr.logp_high.clone(),
                r_il: r_il[k].clone(),
            };
            let ret = mhairl_core::objective::assemble_returns(&inp, w).expect("consistent lengths").ret;
            (ret.clone(), ret)
        })?);
    }
    let dim = policy.params.num_values();
    targets.push(vec![0.0; dim]);
    per_entry.push(per_entry_gradients(&table, &policy, |_, tr| base.predict(&[tr]))?);

    // Sample trajectories from the policy itself and count path visits.
    let mut counts = vec![0u64; table.entries.len()];
    let mut task_rng = rng::derived(seed, rng::OFFSET_ENV, 0);
    let batch = 1000;
    let mut done = 0;
    while done < samples {
        let m = batch.min(samples - done);
        let contexts: Vec<TaskContext> = (0..m).map(|_| spec.sample_task(&mut task_rng)).collect();
        let mut rngs: Vec<Stream> = (0..m).map(|i| rng::derived(seed, rng::OFFSET_POLICY, (done + i) as u64)).collect();
        for tr in rollout_batch(&policy, &spec, &contexts, &mut rngs, SampleMode::Stochastic)? {
            counts[index[&path_key(&tr)]] += 1;
        }
        done += m;
    }

    let n = samples as f64;
    let names = ["mi", "di", "il", "combined", "baseline"];
    let mut out = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let target_norm = targets[c].iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut rep = ChannelReport { name, coords: dim, random_coords: 0, outside: 0, max_abs_z: 0.0, target_norm };
        for j in 0..dim {
            let (mut s1, mut s2) = (0.0, 0.0);
            for (k, &cnt) in counts.iter().enumerate() {
                let v = per_entry[c][k][j];
                s1 += cnt as f64 * v;
                s2 += cnt as f64 * v * v;
            }
            let mean = s1 / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            let se = (var / n).sqrt();
            let diff = (mean - targets[c][j]).abs();
            if se > 0.0 {
                rep.random_coords += 1;
                let z = diff / se;
                rep.max_abs_z = rep.max_abs_z.max(z);
                if z > 3.0 {
                    rep.outside += 1;
                }
            } else if diff > 1e-12 * (1.0 + targets[c][j].abs()) {
                rep.outside += 1;
                rep.max_abs_z = f64::INFINITY;
            }
        }
        out.push(rep);
    }
    Ok(out)
}

/// Whether the posterior update gradients equal reverse-mode gradients of
/// the batch log-likelihood bit for bit, on TinyChain and GridMultiGoal batches.
pub fn posterior_gradient_identity(seed: u64) -> Result<bool> {
    let mut ok = true;
    for spec in [TaskSpec::tinychain(), TaskSpec::grid_multigoal()] {
        let mut r = rng::derived(seed, 400, spec.num_cells() as u64);
        let cfg = PosteriorConfig {
            num_cells: spec.num_cells(),
            num_actions: spec.num_actions,
            num_options: 3,
            context: spec.context,
            option_uses_context: true,
            hidden: 8,
            head_hidden: 8,
        };
        let mut pair = PosteriorPair::new(cfg, true, 1e-3, &mut r)?;
        randomize(&mut pair.task_params, &mut r, 0.5);
        randomize(&mut pair.option_params, &mut r, 0.5);
        let policy = HierPolicy::new(PolicyConfig::for_spec(&spec, 3, true), &mut r)?;
        let contexts: Vec<TaskContext> = (0..12).map(|_| spec.sample_task(&mut r)).collect();
        let mut rngs: Vec<Stream> = (0..12).map(|i| rng::derived(seed, 401, i)).collect();
        let batch = rollout_batch(&policy, &spec, &contexts, &mut rngs, SampleMode::Stochastic)?;
        let refs: Vec<&HierTrajectory> = batch.iter().collect();
        let (tg, og) = pair.loglik_gradients(&refs)?;

        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        let mut tp = pair.task_params.clone();
        let mut g = Graph::new();
        let lp = pair.task.as_ref().expect("task channel").logprob(&mut g, &tp, &refs)?;
        let s = g.sum(lp);
        let m = g.scale(s, 1.0 / refs.len() as f64);
        reverse_grad(&g, m, &mut tp)?;
        ok &= tg.map(|v| bits(&v)) == Some(bits(&tp.grads().flatten(&tp)));

        let mut op = pair.option_params.clone();
        let mut g = Graph::new();
        let lo = pair.option.logprob_seq(&mut g, &op, &refs)?;
        let s = g.sum(lo);
        let m = g.scale(s, 1.0 / refs.len() as f64);
        reverse_grad(&g, m, &mut op)?;
        ok &= bits(&og) == bits(&op.grads().flatten(&op));
    }
    Ok(ok)
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimumReport {
    pub max_deviation: f64,
    pub steps: usize,
    pub pairs_checked: usize,
}

impl OptimumReport {
    pub fn passed(&self, max_steps: usize) -> bool {
        self.max_deviation < 0.05 && self.steps <= max_steps
    }
}

/// Trains an AIRL discriminator (unconstrained `f`) against a frozen random
/// policy on TinyChain, each step on every extended pair weighted by its
/// exact occupancy, and reports the largest `|D − D*|` over pairs with
/// combined occupancy above 1e-3.
pub fn discriminator_optimum(seed: u64, max_steps: usize) -> Result<OptimumReport> {
    let spec = TaskSpec::tinychain();
    let mut r = rng::derived(seed, 500, 0);
    let mut policy = HierPolicy::new(PolicyConfig::for_spec(&spec, 2, true), &mut r)?;
    randomize(&mut policy.params, &mut r, 0.5);
    let ptable = oracle::enumerate_joint(&spec, &policy)?;
    let etable = oracle::expert_table(&spec, 2)?;
    let opt = oracle::exact_disc_optimum(&ptable, &etable);
    let keys: Vec<oracle::PairKey> = opt.keys().copied().collect();
    let all = oracle::pairs_for_keys(&keys, &policy, &spec, spec.context_dim())?;
    let mut expert = all.clone();
    expert.weight = Some(keys.iter().map(|k| opt[k].occ_expert).collect());
    let mut gen = all.clone();
    gen.weight = Some(keys.iter().map(|k| opt[k].occ_policy).collect());
    let cfg = DiscConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: 2,
        ctx_dim: spec.context_dim(),
        hidden: vec![64, 64],
        mode: DiscMode::AirlRaw,
    };
    let mut d = Discriminator::new(cfg, 1e-2, &mut r)?;
    let checked: Vec<usize> =
        (0..keys.len()).filter(|&i| opt[&keys[i]].occ_expert + opt[&keys[i]].occ_policy > 1e-3).collect();
    let deviation = |d: &Discriminator| {
        let dp = d.d_probs(&all);
        checked.iter().map(|&i| (dp[i] - opt[&keys[i]].d_star).abs()).fold(0.0, f64::max)
    };
    let mut worst = deviation(&d);
    let mut steps = 0;
    while steps < max_steps && worst >= 0.05 {
        d.train_step(&expert, &gen)?;
        steps += 1;
        if steps % 50 == 0 || steps == max_steps {
            worst = deviation(&d);
        }
    }
    Ok(OptimumReport { max_deviation: worst, steps, pairs_checked: checked.len() })
}

/// A 1-row tensor, for callers assembling small inputs.
pub fn row(values: Vec<f64>) -> Tensor {
    Tensor::vector(values).expect("finite values")
}
