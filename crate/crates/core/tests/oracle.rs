use std::collections::BTreeMap;

use mhairl_core::env::TaskSpec;
use mhairl_core::objective::ObjectiveWeights;
use mhairl_core::oracle::*;
use mhairl_core::policy::*;
use mhairl_core::posterior::{PosteriorConfig, PosteriorPair};
use mhairl_core::rng;

fn uniform(spec: &TaskSpec, with_ctx: bool) -> HierPolicy {
    HierPolicy::new(PolicyConfig::for_spec(spec, 2, with_ctx), &mut rng::stream(1)).unwrap()
}

fn randomized(spec: &TaskSpec, seed: u64) -> HierPolicy {
    let mut p = uniform(spec, true);
    let mut r = rng::stream(seed);
    let flat: Vec<f64> = p.params.flatten().iter().map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
    p.params.unflatten(&flat);
    p
}

/// Low level that cannot see the option: both embedding rows equal.
fn option_blind(spec: &TaskSpec, seed: u64, uniform_high: bool) -> HierPolicy {
    let mut p = randomized(spec, seed);
    let id = p.params.id("wc").unwrap();
    let e = p.cfg().embed;
    let v = p.params.value_mut(id);
    let row = v.data()[..e].to_vec();
    v.data_mut()[e..].copy_from_slice(&row);
    if uniform_high {
        for name in ["high.out.w", "high.out.b"] {
            let id = p.params.id(name).unwrap();
            p.params.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }
    p
}

fn pair(spec: &TaskSpec) -> PosteriorPair {
    let cfg = PosteriorConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: 2,
        context: spec.context,
        option_uses_context: true,
        hidden: 8,
        head_hidden: 8,
    };
    PosteriorPair::new(cfg, true, 1e-3, &mut rng::stream(2)).unwrap()
}

#[test]
fn uniform_tinychain_counting() {
    let spec = TaskSpec::tinychain();
    let t = enumerate_joint(&spec, &uniform(&spec, true)).unwrap();
    assert_eq!(t.entries.len(), 128);
    for c in 0..2 {
        assert_eq!(t.entries.iter().filter(|e| e.traj.context.index() == Some(c)).count(), 64);
    }
    let p = 0.5f64.powi(3) * 0.5f64.powi(3) * 0.5;
    assert!(t.entries.iter().all(|e| (e.prob - p).abs() < 1e-15));
}

#[test]
fn total_mass_is_one() {
    let spec = TaskSpec::tinychain();
    for seed in 0..5 {
        let t = enumerate_joint(&spec, &randomized(&spec, seed)).unwrap();
        assert!((t.total_mass() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn option_marginal_matches_flat_policy() {
    let spec = TaskSpec::tinychain();
    let p = option_blind(&spec, 3, false);
    let t = enumerate_joint(&spec, &p).unwrap();
    let mut marg: BTreeMap<(usize, Vec<usize>), f64> = BTreeMap::new();
    for e in &t.entries {
        *marg.entry((e.traj.context.index().unwrap(), e.traj.actions.clone())).or_default() += e.prob;
    }
    for ((c, acts), m) in marg {
        let ctx = if c == 0 { [1.0, 0.0] } else { [0.0, 1.0] };
        let mut pos = spec.start;
        let mut flat = 0.5;
        for &a in &acts {
            flat *= p.low_dist(pos, &ctx, 0)[a];
            pos = spec.next_pos(pos, a);
        }
        assert!((m - flat).abs() < 1e-12, "{c} {acts:?}");
    }
}

#[test]
fn expert_identifies_the_task() {
    let spec = TaskSpec::tinychain();
    let t = expert_table(&spec, 2).unwrap();
    assert!((exact_mutual_info(&t) - 2f64.ln()).abs() < 1e-12);
    let ex = exact_posteriors(&t);
    assert!(ex.task.values().all(|v| v.iter().any(|&p| p == 1.0)));
    assert!(ex.option.values().all(|v| v.iter().any(|&p| p == 1.0)));
}

#[test]
fn independent_options_carry_no_directed_information() {
    let spec = TaskSpec::tinychain();
    let t = enumerate_joint(&spec, &option_blind(&spec, 4, true)).unwrap();
    assert!(exact_directed_info(&t).abs() < 1e-12);
    let t = enumerate_joint(&spec, &randomized(&spec, 4)).unwrap();
    assert!(exact_directed_info(&t) > 1e-3);
}

#[test]
fn task_agnostic_policy_gives_even_posterior() {
    let spec = TaskSpec::tinychain();
    let mut p = uniform(&spec, false);
    let mut r = rng::stream(5);
    let flat: Vec<f64> = p.params.flatten().iter().map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
    p.params.unflatten(&flat);
    let t = enumerate_joint(&spec, &p).unwrap();
    let ex = exact_posteriors(&t);
    for v in ex.task.values() {
        assert!((v[0] - 0.5).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
    }
    assert!(exact_mutual_info(&t).abs() < 1e-12);
}

#[test]
fn bayes_posterior_attains_the_mutual_information() {
    let spec = TaskSpec::tinychain();
    for seed in 6..10 {
        let t = enumerate_joint(&spec, &randomized(&spec, seed)).unwrap();
        let ex = exact_posteriors(&t);
        let l_mi = t.prior_entropy() + t.entries.iter().map(|e| e.prob * ex.task_logprob(&e.traj)).sum::<f64>();
        assert!((l_mi - exact_mutual_info(&t)).abs() < 1e-9);
        let l_di: f64 = t
            .entries
            .iter()
            .map(|e| {
                let lo = ex.option_logprobs(&e.traj);
                e.prob * lo.iter().zip(&e.traj.logp_high).map(|(a, b)| a - b).sum::<f64>()
            })
            .sum();
        // The bound conditions π_θ on the last state, so even the Bayes
        // posterior stays below the directed information, and no network beats it.
        assert!(l_di <= exact_directed_info(&t) + 1e-9);
        assert!(exact_l_di(&t, &pair(&spec)).unwrap() <= l_di + 1e-9);
        let l_mi_net = exact_l_mi(&t, &pair(&spec)).unwrap();
        assert!(l_mi_net <= l_mi + 1e-9);
    }
}

#[test]
fn zero_signal_gives_zero_gradient() {
    let spec = TaskSpec::tinychain();
    let p = randomized(&spec, 11);
    let t = enumerate_joint(&spec, &p).unwrap();
    let zeros: Vec<Vec<f64>> = t.entries.iter().map(|_| vec![0.0; 3]).collect();
    let w = ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: 1.0 };
    let f = objective_values(&t, None, Some(&zeros), &w).unwrap();
    let g = exact_gradient(&t, &p, &f).unwrap();
    assert!(g.flatten(&p.params).iter().all(|&v| v == 0.0));

    // A zero-initialized task posterior is constant in X.
    let w = ObjectiveWeights { alpha_mi: 1.0, alpha_di: 0.0, alpha_il: 0.0 };
    let f = objective_values(&t, Some(&pair(&spec)), None, &w).unwrap();
    let g = exact_gradient(&t, &p, &f).unwrap();
    assert!(g.flatten(&p.params).iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn optimum_edge_cases() {
    let spec = TaskSpec::tinychain();
    let e = expert_table(&spec, 2).unwrap();
    assert!(exact_disc_optimum(&e, &e).values().all(|o| o.d_star == 0.5));
    let mut only_one = e.clone();
    only_one.entries.retain(|x| x.traj.context.index() == Some(1));
    let opt = exact_disc_optimum(&only_one, &e);
    for (k, o) in &opt {
        if k.0 == 0 {
            assert_eq!(o.d_star, 1.0);
        }
    }
    let occ = occupancy(&enumerate_joint(&spec, &randomized(&spec, 12)).unwrap());
    assert!((occ.values().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn continuous_and_sparse_specs_refused() {
    let p = HierPolicy::new(PolicyConfig::for_spec(&TaskSpec::grid_multigoal(), 2, true), &mut rng::stream(1)).unwrap();
    assert!(enumerate_joint(&TaskSpec::grid_multigoal(), &p).is_err());
    assert!(enumerate_joint(&TaskSpec::point_room(0), &p).is_err());
}
