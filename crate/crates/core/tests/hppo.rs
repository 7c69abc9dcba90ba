use mhairl_core::env::{TaskContext, TaskSpec};
use mhairl_core::graph::Graph;
use mhairl_core::hppo::*;
use mhairl_core::objective::{ObjectiveWeights, ReturnTable};
use mhairl_core::params::Adam;
use mhairl_core::policy::*;
use mhairl_core::{rng, Tensor};

fn setup(spec: &TaskSpec, seed: u64, m: usize) -> (HierPolicy, Vec<HierTrajectory>) {
    let mut p = HierPolicy::new(PolicyConfig::for_spec(spec, 2, true), &mut rng::stream(seed)).unwrap();
    let mut r = rng::stream(seed + 1);
    let flat: Vec<f64> = p.params.flatten().iter().map(|_| rng::uniform_range(&mut r, -0.5, 0.5)).collect();
    p.params.unflatten(&flat);
    let contexts: Vec<TaskContext> = (0..m).map(|_| spec.sample_task(&mut r)).collect();
    let mut rngs: Vec<_> = (0..m).map(|i| rng::stream(seed * 1000 + i as u64)).collect();
    let t = rollout_batch(&p, spec, &contexts, &mut rngs, SampleMode::Stochastic).unwrap();
    (p, t)
}

fn baselines(spec: &TaskSpec, seed: u64) -> Baselines {
    Baselines::new(spec.num_cells(), 2, spec.context_dim(), &[16], 1e-3, &mut rng::stream(seed)).unwrap()
}

fn tables(trajs: &[HierTrajectory], f: impl Fn(usize, usize) -> f64) -> Vec<ReturnTable> {
    trajs
        .iter()
        .enumerate()
        .map(|(k, t)| {
            let ret: Vec<f64> = (0..t.len()).map(|i| f(k, i)).collect();
            ReturnTable { r_mi: 0.0, r_di: vec![0.0; t.len()], r_il: vec![0.0; t.len()], ret }
        })
        .collect()
}

#[test]
fn zero_baselines_pass_returns_through() {
    let spec = TaskSpec::tinychain();
    let (_, trajs) = setup(&spec, 1, 5);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let tabs = tables(&trajs, |k, i| (k * 3 + i) as f64 * 0.5 - 1.0);
    let adv = compute_advantages(&tabs, &baselines(&spec, 2), &refs, false);
    assert_eq!(adv.high, flatten_returns(&tabs));
    assert_eq!(adv.low, flatten_returns(&tabs));
}

#[test]
fn matched_constant_baseline_kills_the_gradient() {
    let spec = TaskSpec::tinychain();
    let (p, trajs) = setup(&spec, 3, 6);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let kappa = 1.75;
    let mut b = baselines(&spec, 4);
    b.params.set("base.high.1.b", Tensor::vector(vec![kappa]).unwrap()).unwrap();
    b.params.set("base.low.1.b", Tensor::vector(vec![kappa]).unwrap()).unwrap();
    let tabs = tables(&trajs, |_, _| kappa);
    let adv = compute_advantages(&tabs, &b, &refs, false);
    assert!(adv.high.iter().chain(&adv.low).all(|&a| a == 0.0));
    let g = surrogate_gradient(&p, &refs, &adv, 0.2).unwrap();
    assert!(g.flatten(&p.params).iter().all(|&v| v == 0.0));
}

#[test]
fn standardized_advantages() {
    let spec = TaskSpec::tinychain();
    let (_, trajs) = setup(&spec, 5, 8);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let tabs = tables(&trajs, |k, i| ((k * 7 + i * 3) % 5) as f64);
    let adv = compute_advantages(&tabs, &baselines(&spec, 6), &refs, true);
    for v in [&adv.high, &adv.low] {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-9 && (sd - 1.0).abs() < 1e-9);
    }
}

#[test]
fn unit_ratio_surrogate_is_vanilla_policy_gradient() {
    let spec = TaskSpec::grid_multigoal();
    let (p, trajs) = setup(&spec, 7, 4);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let mut r = rng::stream(8);
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    let adv = Advantages {
        high: (0..n).map(|_| rng::normal(&mut r)).collect(),
        low: (0..n).map(|_| rng::normal(&mut r)).collect(),
    };
    let got = surrogate_gradient(&p, &refs, &adv, 0.2).unwrap().flatten(&p.params);
    let mut g = Graph::new();
    let (lh, la) = p.net.step_logprobs(&mut g, &p.params, &refs);
    let wh = g.weighted_sum(lh, adv.high.iter().map(|a| a / refs.len() as f64).collect());
    let wl = g.weighted_sum(la, adv.low.iter().map(|a| a / refs.len() as f64).collect());
    let s = g.add(wh, wl);
    let want = g.backward(s).unwrap().flatten(&p.params);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
    }
}

#[test]
fn clipped_terms_carry_no_gradient() {
    let spec = TaskSpec::tinychain();
    let (p, mut trajs) = setup(&spec, 9, 4);
    for t in &mut trajs {
        t.logp_high.iter_mut().for_each(|v| *v -= 0.5);
        t.logp_low.iter_mut().for_each(|v| *v -= 0.5);
    }
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    let adv = Advantages { high: vec![1.0; n], low: vec![2.0; n] };
    let g = surrogate_gradient(&p, &refs, &adv, 0.2).unwrap();
    assert!(g.flatten(&p.params).iter().all(|&v| v == 0.0));
    // Negative advantages at the same ratios stay unclipped.
    let adv = Advantages { high: vec![-1.0; n], low: vec![-2.0; n] };
    let g = surrogate_gradient(&p, &refs, &adv, 0.2).unwrap();
    assert!(g.flatten(&p.params).iter().any(|&v| v != 0.0));
}

#[test]
fn baseline_fit_contract() {
    let spec = TaskSpec::tinychain();
    let (_, trajs) = setup(&spec, 11, 8);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    let mut b = baselines(&spec, 12);
    let before = b.params.flatten();
    b.fit(&refs, &vec![0.0; n], 0).unwrap();
    assert_eq!(b.params.flatten(), before);

    let targets: Vec<f64> = (0..n).map(|i| (i % 4) as f64).collect();
    let mut prev = b.fit(&refs, &targets, 0).unwrap();
    for _ in 0..100 {
        let cur = b.fit(&refs, &targets, 1).unwrap();
        assert!(cur <= prev * 1.05);
        prev = cur;
    }

    let mut b = Baselines::new(spec.num_cells(), 2, 2, &[16], 1e-2, &mut rng::stream(13)).unwrap();
    b.fit(&refs, &vec![2.5; n], 2000).unwrap();
    let (h, l) = b.predict(&refs);
    assert!(h.iter().chain(&l).all(|&v| (v - 2.5).abs() < 1e-3));
}

#[test]
fn zero_rewards_leave_the_policy_alone() {
    let spec = TaskSpec::tinychain();
    let (mut p, trajs) = setup(&spec, 14, 8);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let r_il: Vec<Vec<f64>> = trajs.iter().map(|t| vec![0.0; t.len()]).collect();
    let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 };
    let tabs = returns_for(&refs, &r_il, None, None, &w).unwrap();
    assert!(flatten_returns(&tabs).iter().all(|&v| v == 0.0));
    let adv = compute_advantages(&tabs, &baselines(&spec, 15), &refs, false);
    let before = p.params.flatten();
    let cfg = PpoConfig { standardize: false, ..PpoConfig::default() };
    ppo_update(&mut p, &mut Adam::new(1e-3), &refs, &adv, &cfg, &mut rng::stream(16)).unwrap();
    assert_eq!(p.params.flatten(), before);
}

#[test]
fn ppo_update_raises_the_surrogate() {
    let spec = TaskSpec::tinychain();
    let (mut p, trajs) = setup(&spec, 17, 16);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let r_il: Vec<Vec<f64>> = trajs.iter().map(|t| t.env_rewards.clone()).collect();
    let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 };
    let tabs = returns_for(&refs, &r_il, None, None, &w).unwrap();
    let adv = compute_advantages(&tabs, &baselines(&spec, 18), &refs, true);
    let value = |p: &HierPolicy| {
        let mut g = Graph::new();
        let (h, l) = surrogate_graph(&mut g, p, &refs, &adv.high, &adv.low, 0.2);
        g.value(h).item() + g.value(l).item()
    };
    let before = value(&p);
    ppo_update(&mut p, &mut Adam::new(1e-3), &refs, &adv, &PpoConfig::default(), &mut rng::stream(19)).unwrap();
    assert!(value(&p) > before);
}

#[test]
fn transfer_copies_low_level_and_embeddings() {
    let spec = TaskSpec::point_room(0);
    let (src, _) = setup(&TaskSpec::grid_multigoal(), 20, 1);
    let mut dst = HierPolicy::new(src.cfg().clone(), &mut rng::stream(21)).unwrap();
    let copied = transfer_init(&mut dst, &src.params).unwrap();
    assert!(copied > 0);
    for (id, name, v) in dst.params.iter() {
        let s = src.params.value(src.params.id(name).unwrap());
        if HierPolicy::is_transferable(name) {
            assert_eq!(v, s, "{name}");
        } else if name.starts_with("high.q") {
            assert_ne!(v, s, "{name}");
        }
        let _ = id;
    }
    let c = spec.sample_task(&mut rng::stream(1));
    for pos in [0, 60, 120] {
        assert_eq!(dst.low_dist(pos, &c.value, 1), src.low_dist(pos, &c.value, 1));
    }
}

#[test]
fn rl_driver_on_sparse_room() {
    let spec = TaskSpec::point_room(2);
    let mut p = HierPolicy::new(PolicyConfig::for_spec(&spec, 4, true), &mut rng::stream(22)).unwrap();
    let cfg = PpoConfig { trajectories: 8, ..PpoConfig::default() };
    let a = hppo_rl(&mut p, &spec, &cfg, 3, 5).unwrap();
    assert_eq!(a.mean_returns.len(), 3);
    assert!(a.mean_returns.iter().all(|&r| (0.0..=1.0).contains(&r)));
    let mut q = HierPolicy::new(PolicyConfig::for_spec(&spec, 4, true), &mut rng::stream(22)).unwrap();
    assert_eq!(hppo_rl(&mut q, &spec, &cfg, 3, 5).unwrap(), a);
    assert_eq!(p.params, q.params);
}
