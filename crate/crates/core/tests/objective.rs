use mhairl_core::env::{ContextKind, TaskSpec};
use mhairl_core::objective::*;
use mhairl_core::oracle;
use mhairl_core::policy::{HierPolicy, PolicyConfig};
use mhairl_core::posterior::{PosteriorConfig, PosteriorPair};
use mhairl_core::rng;
use proptest::prelude::*;

#[test]
fn two_step_hand_case() {
    let inp = ReturnInputs {
        r_mi: Some(1.0),
        log_option_post: vec![1.0, 1.0],
        logp_high: vec![1.0, 1.0],
        r_il: vec![1.0, 1.0],
    };
    let w = ObjectiveWeights { alpha_mi: 1.0, alpha_di: 1.0, alpha_il: 1.0 };
    let got = assemble_returns(&inp, &w).unwrap();
    // Straight-line reference: the DI terms are 1 − 1 = 0.
    let r_di_2 = 1.0 - 1.0;
    let ret_2 = 1.0 + (r_di_2 + 1.0);
    let r_di_1 = 1.0 - 1.0;
    let ret_1 = 1.0 + (r_di_1 + 1.0) + (r_di_2 + 1.0);
    assert_eq!(got.ret, vec![ret_1, ret_2]);
    assert_eq!(got.r_di, vec![0.0, 0.0]);
}

#[test]
fn asymmetric_hand_case() {
    let inp = ReturnInputs {
        r_mi: Some(-0.5),
        log_option_post: vec![-0.2, -1.0, -0.1],
        logp_high: vec![-0.7, -0.3, -0.9],
        r_il: vec![2.0, -1.0, 0.5],
    };
    let w = ObjectiveWeights { alpha_mi: 2.0, alpha_di: 0.5, alpha_il: 3.0 };
    let got = assemble_returns(&inp, &w).unwrap();
    let mut want = [0.0; 3];
    for (t, slot) in want.iter_mut().enumerate() {
        let mut acc = 2.0 * -0.5;
        for i in t..3 {
            acc += 0.5 * (inp.log_option_post[i] - inp.logp_high[i]) + 3.0 * inp.r_il[i];
        }
        *slot = acc;
    }
    for (a, b) in got.ret.iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn uninformative_posterior_gives_zero_mi() {
    assert_eq!(l_mi(&[0.5f64.ln(); 10], ContextKind::Discrete(2)), 0.0);
}

#[test]
fn perfect_posterior_on_tinychain_expert_gives_ln2() {
    let spec = TaskSpec::tinychain();
    let table = oracle::expert_table(&spec, 2).unwrap();
    let exact = oracle::exact_posteriors(&table);
    let lp: Vec<f64> = table.entries.iter().map(|e| exact.task_logprob(&e.traj)).collect();
    assert_eq!(lp, vec![0.0, 0.0]);
    assert!((l_mi(&lp, ContextKind::Discrete(2)) - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn matching_option_posterior_cancels_di() {
    let lp = vec![vec![-0.3, -1.2, -0.05]; 4];
    assert_eq!(l_di(&lp, &lp), 0.0);
    assert_eq!(l_di(&[vec![0.0; 3]], &[vec![0.0; 3]]), 0.0);
}

#[test]
fn lower_bounds_on_tinychain() {
    let spec = TaskSpec::tinychain();
    let pcfg = PosteriorConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: 2,
        context: spec.context,
        option_uses_context: true,
        hidden: 8,
        head_hidden: 8,
    };
    let mut r = rng::stream(21);
    for k in 0..10 {
        let mut pol = HierPolicy::new(PolicyConfig::for_spec(&spec, 2, true), &mut rng::stream(k)).unwrap();
        let flat: Vec<f64> = pol.params.flatten().iter().map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
        pol.params.unflatten(&flat);
        let mut pair = PosteriorPair::new(pcfg.clone(), true, 1e-3, &mut rng::stream(100 + k)).unwrap();
        let f: Vec<f64> = pair.task_params.flatten().iter().map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
        pair.task_params.unflatten(&f);
        let f: Vec<f64> = pair.option_params.flatten().iter().map(|_| rng::uniform_range(&mut r, -1.0, 1.0)).collect();
        pair.option_params.unflatten(&f);
        let table = oracle::enumerate_joint(&spec, &pol).unwrap();
        let mi = oracle::exact_mutual_info(&table);
        let di = oracle::exact_directed_info(&table);
        assert!(oracle::exact_l_mi(&table, &pair).unwrap() <= mi + 1e-9);
        assert!(oracle::exact_l_di(&table, &pair).unwrap() <= di + 1e-9);
    }
}

proptest! {
    #[test]
    fn returns_telescope(
        r_il in prop::collection::vec(-5.0f64..5.0, 1..12),
        seed in 0u64..1000,
        a1 in 0.0f64..2.0, a2 in 0.0f64..2.0, a3 in 0.01f64..2.0,
        r_mi in -3.0f64..0.0,
    ) {
        let t = r_il.len();
        let mut r = rng::stream(seed);
        let post: Vec<f64> = (0..t).map(|_| -rng::uniform(&mut r) * 3.0).collect();
        let high: Vec<f64> = (0..t).map(|_| -rng::uniform(&mut r) * 3.0).collect();
        let inp = ReturnInputs { r_mi: Some(r_mi), log_option_post: post.clone(), logp_high: high.clone(), r_il: r_il.clone() };
        let w = ObjectiveWeights { alpha_mi: a1, alpha_di: a2, alpha_il: a3 };
        let tab = assemble_returns(&inp, &w).unwrap();
        for i in 0..t {
            let next = if i + 1 < t { tab.ret[i + 1] } else { a1 * r_mi };
            let step = a2 * (post[i] - high[i]) + a3 * r_il[i];
            prop_assert!((tab.ret[i] - next - step).abs() < 1e-9);
        }
        let only_il = assemble_returns(&inp, &ObjectiveWeights { alpha_mi: 0.0, alpha_di: 0.0, alpha_il: a3 }).unwrap();
        for i in 0..t {
            let s: f64 = r_il[i..].iter().sum();
            prop_assert!((only_il.ret[i] - a3 * s).abs() < 1e-9);
        }
        let only_mi = assemble_returns(&inp, &ObjectiveWeights { alpha_mi: a1, alpha_di: 0.0, alpha_il: 0.0 }).unwrap();
        prop_assert!(only_mi.ret.iter().all(|&v| v == a1 * r_mi));
    }
}
