use mhairl_core::env::{ContextKind, TaskContext, TaskSpec};
use mhairl_core::graph::{reverse_grad, Graph};
use mhairl_core::oracle;
use mhairl_core::policy::*;
use mhairl_core::posterior::*;
use mhairl_core::rng;

fn cfg(spec: &TaskSpec, n: usize) -> PosteriorConfig {
    PosteriorConfig {
        num_cells: spec.num_cells(),
        num_actions: spec.num_actions,
        num_options: n,
        context: spec.context,
        option_uses_context: true,
        hidden: 16,
        head_hidden: 16,
    }
}

fn sampled(spec: &TaskSpec, policy: &HierPolicy, n: usize, seed: u64) -> Vec<HierTrajectory> {
    let mut tr = rng::derived(seed, rng::OFFSET_ENV, 0);
    let contexts: Vec<TaskContext> = (0..n).map(|_| spec.sample_task(&mut tr)).collect();
    let mut rngs: Vec<_> = (0..n).map(|i| rng::derived(seed, rng::OFFSET_POLICY, i as u64)).collect();
    rollout_batch(policy, spec, &contexts, &mut rngs, SampleMode::Stochastic).unwrap()
}

fn uniform_policy(spec: &TaskSpec, n: usize) -> HierPolicy {
    HierPolicy::new(PolicyConfig::for_spec(spec, n, true), &mut rng::stream(1)).unwrap()
}

#[test]
fn zero_head_task_values() {
    let spec = TaskSpec::tinychain();
    let pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-3, &mut rng::stream(2)).unwrap();
    let trajs = sampled(&spec, &uniform_policy(&spec, 2), 5, 3);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let mut g = Graph::new();
    let v = pair.task.as_ref().unwrap().logprob(&mut g, &pair.task_params, &refs).unwrap();
    assert!(g.value(v).data().iter().all(|&x| (x - 0.5f64.ln()).abs() < 1e-15));

    let spec = TaskSpec::grid_multigoal();
    let pair = PosteriorPair::new(cfg(&spec, 4), true, 1e-3, &mut rng::stream(2)).unwrap();
    let mut trajs = sampled(&spec, &uniform_policy(&spec, 4), 3, 3);
    for t in &mut trajs {
        t.context = TaskContext::continuous(vec![0.0, 0.0]).unwrap();
    }
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let mut g = Graph::new();
    let v = pair.task.as_ref().unwrap().logprob(&mut g, &pair.task_params, &refs).unwrap();
    assert!(g.value(v).data().iter().all(|&x| (x - -1.837877).abs() < 1e-6));
}

#[test]
fn zero_head_option_values() {
    let spec = TaskSpec::grid_multigoal();
    for (n, want) in [(1usize, 0.0), (4, 0.25f64.ln())] {
        let pair = PosteriorPair::new(cfg(&spec, n), true, 1e-3, &mut rng::stream(4)).unwrap();
        let trajs = sampled(&spec, &uniform_policy(&spec, n), 4, 5);
        let refs: Vec<&HierTrajectory> = trajs.iter().collect();
        let mut g = Graph::new();
        let v = pair.option.logprob_seq(&mut g, &pair.option_params, &refs).unwrap();
        assert_eq!(g.value(v).len(), 4 * spec.horizon);
        assert!(g.value(v).data().iter().all(|&x| (x - want).abs() < 1e-15), "N = {n}");
    }
}

#[test]
fn mixed_lengths_rejected() {
    let spec = TaskSpec::tinychain();
    let pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-3, &mut rng::stream(2)).unwrap();
    let mut trajs = sampled(&spec, &uniform_policy(&spec, 2), 2, 3);
    trajs[1].actions.pop();
    trajs[1].states.pop();
    trajs[1].options.pop();
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    assert!(pair.loglik_gradients(&refs).is_err());
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn supervised_fit_recovers_bayes_posteriors() {
    let spec = TaskSpec::tinychain();
    let table = oracle::expert_table(&spec, 2).unwrap();
    let exact = oracle::exact_posteriors(&table);
    let mut pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-2, &mut rng::stream(6)).unwrap();
    let refs = table.trajectories();
    pair.fit(&refs, 300).unwrap();

    let dists = pair.task.as_ref().unwrap().distributions(&pair.task_params, &refs).unwrap();
    for (e, d) in table.entries.iter().zip(&dists) {
        let TaskDist::Categorical(p) = d else { panic!("discrete context") };
        assert!(total_variation(p, &exact.task[&e.traj.actions]) < 0.05);
    }
    let mut g = Graph::new();
    let logits = pair.option.logits(&mut g, &pair.option_params, &refs).unwrap();
    let lv = g.value(logits);
    let b = refs.len();
    for (k, e) in table.entries.iter().enumerate() {
        let c = e.traj.context.index().unwrap();
        for t in 1..=spec.horizon {
            let p = mhairl_core::math::softmax(lv.row((t - 1) * b + k));
            let key = (c, e.traj.options[1..t].to_vec(), e.traj.actions[..t].to_vec());
            assert!(total_variation(&p, &exact.option[&key]) < 0.05, "trajectory {k} step {t}");
        }
    }
}

#[test]
fn loglik_gradients_equal_reverse_mode() {
    let spec = TaskSpec::tinychain();
    let pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-3, &mut rng::stream(8)).unwrap();
    let trajs = sampled(&spec, &uniform_policy(&spec, 2), 16, 9);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let (tg, og) = pair.loglik_gradients(&refs).unwrap();

    let mut tp = pair.task_params.clone();
    let mut g = Graph::new();
    let lp = pair.task.as_ref().unwrap().logprob(&mut g, &tp, &refs).unwrap();
    let s = g.sum(lp);
    let m = g.scale(s, 1.0 / refs.len() as f64);
    reverse_grad(&g, m, &mut tp).unwrap();
    let want: Vec<f64> = tp.grads().flatten(&tp);
    assert_eq!(tg.unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.iter().map(|v| v.to_bits()).collect::<Vec<_>>());

    let mut op = pair.option_params.clone();
    let mut g = Graph::new();
    let lo = pair.option.logprob_seq(&mut g, &op, &refs).unwrap();
    let s = g.sum(lo);
    let m = g.scale(s, 1.0 / refs.len() as f64);
    reverse_grad(&g, m, &mut op).unwrap();
    let want: Vec<f64> = op.grads().flatten(&op);
    assert_eq!(og.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), want.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn fit_loss_is_nonincreasing() {
    let spec = TaskSpec::tinychain();
    let mut pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-3, &mut rng::stream(10)).unwrap();
    let trajs = sampled(&spec, &uniform_policy(&spec, 2), 32, 11);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    let mut prev = pair.fit(&refs, 1).unwrap();
    for _ in 0..49 {
        let cur = pair.fit(&refs, 1).unwrap();
        assert!(cur.task_nll <= prev.task_nll * 1.05 && cur.option_nll <= prev.option_nll * 1.05);
        prev = cur;
    }
}

#[test]
fn uninformative_batch_converges_to_prior() {
    let spec = TaskSpec::tinychain();
    let policy = uniform_policy(&spec, 2);
    let mut pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-2, &mut rng::stream(12)).unwrap();
    let trajs = sampled(&spec, &policy, 256, 13);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    pair.fit(&refs, 200).unwrap();
    let held = sampled(&spec, &policy, 2000, 14);
    let hrefs: Vec<&HierTrajectory> = held.iter().collect();
    let mut g = Graph::new();
    let lp = pair.task.as_ref().unwrap().logprob(&mut g, &pair.task_params, &hrefs).unwrap();
    let nll = -g.value(lp).data().iter().sum::<f64>() / hrefs.len() as f64;
    assert!((nll - 2f64.ln()).abs() < 0.05, "held-out task loss {nll}");
}

#[test]
fn snapshot_is_frozen() {
    let spec = TaskSpec::tinychain();
    let mut pair = PosteriorPair::new(cfg(&spec, 2), true, 1e-2, &mut rng::stream(15)).unwrap();
    let snap = pair.snapshot();
    let frozen = snap.clone();
    let trajs = sampled(&spec, &uniform_policy(&spec, 2), 8, 16);
    let refs: Vec<&HierTrajectory> = trajs.iter().collect();
    pair.fit(&refs, 5).unwrap();
    assert_eq!(snap, frozen);
    assert_ne!(pair.task_params.flatten(), snap.task_params.flatten());
}

#[test]
fn gaussian_context_draws() {
    let d = TaskDist::Gaussian { mean: vec![1.0, -2.0], log_std: vec![0.0, 0.5f64.ln()] };
    let mut r = rng::stream(17);
    let n = 20_000;
    let mut m = [0.0; 2];
    for _ in 0..n {
        let c = d.sample(&mut r);
        m[0] += c.value[0] / n as f64;
        m[1] += c.value[1] / n as f64;
    }
    assert!((m[0] - 1.0).abs() < 0.03 && (m[1] + 2.0).abs() < 0.015);
    let c = TaskContext::continuous(vec![1.0, -2.0]).unwrap();
    let want = -(2.0 * std::f64::consts::PI).ln() - 0.5f64.ln();
    assert!((d.logprob(&c) - want).abs() < 1e-12);
    assert_eq!(ContextKind::Continuous(2).dim(), 2);
}
