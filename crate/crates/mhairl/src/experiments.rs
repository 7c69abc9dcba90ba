//! Multi-seed drivers: GridMultiGoal imitation runs and the sparse-task
//! transfer comparison.

use mhairl_core::emtrain::{self, RunResult, TrainConfig, Trainer, Variant};
use mhairl_core::env::{Family, TaskSpec};
use mhairl_core::expert::Demonstration;
use mhairl_core::hppo::{self, PpoConfig, RlCurve};
use mhairl_core::policy::{HierPolicy, PolicyConfig};
use mhairl_core::rng;
use mhairl_core::ParamSet;
use serde::Serialize;

use crate::analysis::{self, OptionStructure};
use crate::error::Result;

#[derive(Clone, Debug, Serialize)]
pub struct GridRun {
    pub variant: &'static str,
    pub seed: u64,
    pub final_return: f64,
    pub expert_return: f64,
    pub structure: OptionStructure,
    pub seconds: f64,
}

impl GridRun {
    pub fn fraction(&self) -> f64 {
        self.final_return / self.expert_return
    }
}

/// Trains one variant on GridMultiGoal and scores the final policy on the
/// run's held-out tasks.
pub fn grid_run(variant: Variant, seed: u64, episodes: usize, demos: &[Demonstration]) -> Result<(Trainer, RunResult, GridRun)> {
    let mut cfg = TrainConfig::new(TaskSpec::grid_multigoal(), variant, seed);
    cfg.episodes = episodes;
    if variant == Variant::HAirl {
        cfg.weights.alpha_mi = 0.0;
    }
    let start = std::time::Instant::now();
    let (tr, res) = emtrain::run(cfg, demos, |_| {})?;
    let seconds = start.elapsed().as_secs_f64();
    let last = res.evals.last().expect("run evaluates at the end");
    let structure = analysis::option_structure(&tr.cfg.spec, &last.trajectories)?;
    let summary = GridRun {
        variant: variant.name(),
        seed,
        final_return: last.mean_return,
        expert_return: res.expert_return,
        structure,
        seconds,
    };
    Ok((tr, res, summary))
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferCase {
    pub env: &'static str,
    pub goal: usize,
    pub seed: u64,
    pub scratch: usize,
    pub transferred: usize,
    #[serde(skip)]
    pub scratch_curve: RlCurve,
    #[serde(skip)]
    pub transferred_curve: RlCurve,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransferReport {
    pub cases: Vec<TransferCase>,
    pub median_scratch: f64,
    pub median_transferred: f64,
}

pub fn median(xs: &[usize]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_unstable();
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0,
    }
}

/// Runs HPPO from scratch and from a transferred initialization (low level
/// and `W_C` copied from `source`) on every goal and seed. Both arms share
/// the architecture `arch` and the same seed, so they differ only in the
/// copied tensors.
pub fn transfer(
    family: Family,
    source: &ParamSet,
    arch: &PolicyConfig,
    goals: &[usize],
    seeds: &[u64],
    episodes: usize,
    ppo: &PpoConfig,
) -> Result<Vec<TransferCase>> {
    let base = match family {
        Family::PointMaze => TaskSpec::point_maze(0),
        _ => TaskSpec::point_room(0),
    };
    let mut out = Vec::new();
    for &goal in goals {
        let spec = base.with_goal(goal);
        for &seed in seeds {
            let mut cfg = PolicyConfig::for_spec(&spec, arch.num_options, true);
            cfg.embed = arch.embed;
            cfg.hidden = arch.hidden.clone();
            cfg.heads = arch.heads;
            let fresh = || HierPolicy::new(cfg.clone(), &mut rng::derived(seed, rng::OFFSET_INIT, 0));
            let mut scratch = fresh()?;
            let mut moved = fresh()?;
            hppo::transfer_init(&mut moved, source)?;
            let sc = hppo::hppo_rl(&mut scratch, &spec, ppo, episodes, seed)?;
            let tc = hppo::hppo_rl(&mut moved, &spec, ppo, episodes, seed)?;
            out.push(TransferCase {
                env: family.name(),
                goal,
                seed,
                scratch: sc.episodes_to_first_success(),
                transferred: tc.episodes_to_first_success(),
                scratch_curve: sc,
                transferred_curve: tc,
            });
        }
    }
    Ok(out)
}

pub fn summarize(cases: Vec<TransferCase>) -> TransferReport {
    let s: Vec<usize> = cases.iter().map(|c| c.scratch).collect();
    let t: Vec<usize> = cases.iter().map(|c| c.transferred).collect();
    TransferReport { median_scratch: median(&s), median_transferred: median(&t), cases }
}

/// Transfer curves as CSV rows `env,goal,seed,init,episode,mean_return,greedy_success`.
pub fn transfer_csv(cases: &[TransferCase]) -> String {
    let mut out = String::from("env,goal,seed,init,episode,mean_return,greedy_success\n");
    for c in cases {
        for (init, curve) in [("scratch", &c.scratch_curve), ("transferred", &c.transferred_curve)] {
            for (i, (r, s)) in curve.mean_returns.iter().zip(&curve.greedy_success).enumerate() {
                out.push_str(&format!("{},{},{},{init},{},{r},{}\n", c.env, c.goal, c.seed, i + 1, *s as u8));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3, 1, 2]), 2.0);
        assert_eq!(median(&[4, 1, 2, 3]), 2.5);
        assert!(median(&[]).is_nan());
    }
}
