use mhairl_core::emtrain::*;
use mhairl_core::env::{ContextKind, TaskSpec};
use mhairl_core::expert::{generate_dataset, Demonstration};
use mhairl_core::objective::ObjectiveWeights;

fn small(spec: TaskSpec, variant: Variant, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(spec, variant, seed);
    cfg.num_options = 2;
    cfg.disc_hidden = vec![16, 16];
    cfg.policy_hidden = vec![16];
    cfg.posterior_hidden = 16;
    cfg.posterior_head_hidden = 16;
    cfg.embed = 8;
    cfg.ppo.trajectories = 16;
    if variant == Variant::HAirl {
        cfg.weights.alpha_mi = 0.0;
    }
    cfg
}

fn demos(spec: &TaskSpec, n: usize, annotate: bool) -> Vec<Demonstration> {
    generate_dataset(spec, n, 7, annotate).unwrap().demos
}

#[test]
fn h_airl_has_no_task_channel() {
    let spec = TaskSpec::tinychain();
    let mut cfg = small(spec.clone(), Variant::HAirl, 1);
    cfg.episodes = 4;
    let (tr, res) = run(cfg.clone(), &demos(&spec, 20, false), |_| {}).unwrap();
    assert!(tr.posteriors.task.is_none());
    assert!(res.metrics.iter().all(|m| m.l_mi == 0.0));
    cfg.weights.alpha_mi = 1.0;
    assert!(Trainer::new(cfg, &demos(&spec, 4, false)).is_err());
}

#[test]
fn zero_posterior_steps_freeze_the_posteriors() {
    let spec = TaskSpec::tinychain();
    let mut cfg = small(spec.clone(), Variant::MhAirl, 2);
    cfg.ratio = Ratio { disc: 1, policy: 1, posterior: 0 };
    let d = demos(&spec, 20, false);
    let mut tr = Trainer::new(cfg, &d).unwrap();
    let task = tr.posteriors.task_params.flatten();
    let opt = tr.posteriors.option_params.flatten();
    for _ in 0..3 {
        tr.train_episode().unwrap();
    }
    assert_eq!(tr.posteriors.task_params.flatten(), task);
    assert_eq!(tr.posteriors.option_params.flatten(), opt);
}

#[test]
fn ratio_passes_must_be_positive() {
    let spec = TaskSpec::tinychain();
    let d = demos(&spec, 4, false);
    for ratio in [Ratio { disc: 0, policy: 3, posterior: 10 }, Ratio { disc: 1, policy: 0, posterior: 10 }] {
        let mut cfg = small(spec.clone(), Variant::MhAirl, 3);
        cfg.ratio = ratio;
        assert!(Trainer::new(cfg, &d).is_err());
    }
    let mut cfg = small(spec.clone(), Variant::MhAirl, 3);
    cfg.num_options = 0;
    assert!(Trainer::new(cfg, &d).is_err());
    let cfg = small(TaskSpec::point_room(0), Variant::MhAirl, 3);
    assert!(cfg.validate().is_err());
}

#[test]
fn runs_are_deterministic() {
    let spec = TaskSpec::grid_multigoal();
    let d = demos(&spec, 8, false);
    let mut cfg = small(spec, Variant::MhAirl, 4);
    cfg.episodes = 3;
    cfg.ppo.trajectories = 4;
    let rows = |cfg: TrainConfig| {
        let mut out = Vec::new();
        let (tr, res) = run(cfg, &d, |r| out.push(r.csv())).unwrap();
        (out, tr.policy.params.flatten(), res.evals.last().unwrap().returns.clone())
    };
    let a = rows(cfg.clone());
    assert_eq!(a, rows(cfg.clone()));
    cfg.seed = 5;
    assert_ne!(a.0, rows(cfg).0);
}

#[test]
fn annotated_demos_skip_the_e_step() {
    let spec = TaskSpec::tinychain();
    let d = demos(&spec, 10, true);
    let mut tr = Trainer::new(small(spec.clone(), Variant::MhAirl, 6), &d).unwrap();
    let before = tr.expert().to_vec();
    for _ in 0..2 {
        tr.train_episode().unwrap();
    }
    assert_eq!(tr.estep_calls, 0);
    assert_eq!(tr.expert(), &before[..]);

    let mut cfg = small(spec, Variant::MhAirl, 6);
    cfg.override_annotations = true;
    let mut tr = Trainer::new(cfg, &d).unwrap();
    tr.train_episode().unwrap();
    assert_eq!(tr.estep_calls, 1);
}

#[test]
fn fresh_posteriors_annotate_uniformly() {
    let spec = TaskSpec::tinychain();
    let d = demos(&spec, 3400, false);
    let mut cfg = small(spec.clone(), Variant::MhAirl, 8);
    cfg.num_options = 4;
    let draw = |cfg: TrainConfig| {
        let mut tr = Trainer::new(cfg, &d).unwrap();
        let snap = tr.posteriors.snapshot();
        tr.e_step(&snap).unwrap();
        assert_eq!(tr.estep_calls, 1);
        tr.expert().to_vec()
    };
    let ex = draw(cfg.clone());
    let mut zc = [0usize; 4];
    let mut cc = [0usize; 2];
    for t in &ex {
        assert_eq!(t.options[0], mhairl_core::policy::DUMMY_OPTION);
        for &z in &t.options[1..] {
            zc[z] += 1;
        }
        cc[t.context.index().unwrap()] += 1;
    }
    let nz: usize = zc.iter().sum();
    assert!(nz >= 10_000);
    for c in zc {
        assert!((c as f64 / nz as f64 - 0.25).abs() < 0.02, "{zc:?}");
    }
    for c in cc {
        assert!((c as f64 / ex.len() as f64 - 0.5).abs() < 0.03, "{cc:?}");
    }
    assert_eq!(ex, draw(cfg));
}

fn final_fraction(cfg: TrainConfig, d: &[Demonstration]) -> f64 {
    let (_, res) = run(cfg, d, |_| {}).unwrap();
    res.evals.last().unwrap().mean_return / res.expert_return
}

#[test]
fn annotated_tinychain_reaches_the_expert() {
    let spec = TaskSpec::tinychain();
    let mut cfg = small(spec.clone(), Variant::MhAirl, 9);
    cfg.episodes = 200;
    cfg.eval_every = 0;
    let frac = final_fraction(cfg, &demos(&spec, 50, true));
    assert!(frac >= 0.95, "{frac}");
}

#[test]
fn single_option_single_task_h_airl_converges() {
    let spec = TaskSpec { context: ContextKind::Discrete(1), ..TaskSpec::tinychain() };
    let mut cfg = small(spec.clone(), Variant::HAirl, 10);
    cfg.num_options = 1;
    cfg.episodes = 200;
    cfg.eval_every = 0;
    cfg.weights = ObjectiveWeights { alpha_mi: 0.0, ..cfg.weights };
    let frac = final_fraction(cfg, &demos(&spec, 50, false));
    assert!(frac >= 0.95, "{frac}");
}
