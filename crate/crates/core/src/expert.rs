//! Scripted experts and demonstration sets.
//!
//! Grid experts walk an L-shaped path: horizontal leg first, then vertical,
//! then stay. The chain expert walks toward its goal end. Experts are
//! deterministic; demonstration diversity comes only from task sampling.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::env::{self, EnvState, Family, TaskContext, TaskSpec};
use crate::error::{Error, Result};
use crate::policy::{HierTrajectory, DUMMY_OPTION};
use crate::rng;

pub fn script_expert_action(spec: &TaskSpec, state: &EnvState) -> Result<usize> {
    if state.done {
        return Err(Error::contract("expert asked to act in a finished episode"));
    }
    match spec.family {
        Family::TinyChain => Ok(if state.goal == 0 { env::CHAIN_LEFT } else { env::CHAIN_RIGHT }),
        Family::GridMultiGoal => {
            let (x, y) = spec.xy(state.pos);
            let (gx, gy) = spec.xy(state.goal);
            Ok(if x < gx {
                env::RIGHT
            } else if x > gx {
                env::LEFT
            } else if y < gy {
                env::UP
            } else if y > gy {
                env::DOWN
            } else {
                env::STAY
            })
        }
        other => Err(Error::contract(format!("no scripted expert for {}", other.name()))),
    }
}

/// Direction label of an expert action, used for option annotation and the
/// option-structure analysis: grid up/down/left/right map to 0..3 and
/// `None` for stay; chain left/right map to 0/1.
pub fn direction_label(spec: &TaskSpec, action: usize) -> Option<usize> {
    match spec.family {
        Family::TinyChain => Some(action),
        _ => (action != env::STAY).then_some(action),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    /// `T + 1` agent-cell one-hots (the context is not part of the stored state).
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub context: Option<Vec<f64>>,
    /// `Z_0..Z_T` with the dummy `Z_0`.
    pub options: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoMeta {
    pub env: String,
    pub seed: u64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoSet {
    pub demos: Vec<Demonstration>,
    pub meta: DemoMeta,
}

impl Demonstration {
    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::contract(format!(
                "{} states for {} actions",
                self.states.len(),
                self.actions.len()
            )));
        }
        if let Some(z) = &self.options {
            if z.len() != self.states.len() {
                return Err(Error::contract(format!("{} options for {} states", z.len(), self.states.len())));
            }
            if z[0] != DUMMY_OPTION {
                return Err(Error::contract("Z_0 must be the dummy option"));
            }
        }
        Ok(())
    }

    pub fn is_annotated(&self) -> bool {
        self.context.is_some() && self.options.is_some()
    }

    /// Learner-side view. Missing context becomes zeros of the spec's width
    /// and missing options become the dummy everywhere; the E-step fills
    /// them in.
    pub fn to_trajectory(&self, spec: &TaskSpec) -> Result<HierTrajectory> {
        self.validate()?;
        let mut states = Vec::with_capacity(self.states.len());
        for (t, s) in self.states.iter().enumerate() {
            if s.len() != spec.num_cells() {
                return Err(Error::contract(format!("state {t} has width {}, expected {}", s.len(), spec.num_cells())));
            }
            let pos = s.iter().position(|&v| v == 1.0);
            match pos {
                Some(p) if s.iter().filter(|&&v| v != 0.0).count() == 1 => states.push(p),
                _ => return Err(Error::contract(format!("state {t} is not a one-hot"))),
            }
        }
        if let Some(&a) = self.actions.iter().find(|&&a| a >= spec.num_actions) {
            return Err(Error::contract(format!("action {a} out of range")));
        }
        let context = match &self.context {
            Some(v) => match spec.context {
                env::ContextKind::Discrete(n) => {
                    let i = v.iter().position(|&x| x == 1.0).ok_or_else(|| Error::contract("context is not one-hot"))?;
                    TaskContext::discrete(i, n)?
                }
                env::ContextKind::Continuous(_) => TaskContext::continuous(v.clone())?,
            },
            None => placeholder_context(spec),
        };
        context.validate(spec.context)?;
        let options = self.options.clone().unwrap_or_else(|| alloc::vec![DUMMY_OPTION; self.states.len()]);
        Ok(HierTrajectory {
            context,
            states,
            options,
            actions: self.actions.clone(),
            logp_high: Vec::new(),
            logp_low: Vec::new(),
            env_rewards: Vec::new(),
        })
    }
}

pub fn placeholder_context(spec: &TaskSpec) -> TaskContext {
    match spec.context {
        env::ContextKind::Discrete(n) => TaskContext::discrete(0, n).expect("n >= 1"),
        env::ContextKind::Continuous(d) => TaskContext::continuous(alloc::vec![0.0; d]).expect("finite"),
    }
}

/// One expert episode on task `c`: demonstration (fully annotated) and the
/// hidden-reward total.
pub fn expert_episode(spec: &TaskSpec, c: &TaskContext) -> Result<(Demonstration, f64)> {
    let mut s = spec.reset(c)?;
    let mut states = alloc::vec![spec.agent_one_hot(s.pos)];
    let mut actions = Vec::new();
    let mut options = alloc::vec![DUMMY_OPTION];
    let mut total = 0.0;
    while !s.done {
        let a = script_expert_action(spec, &s)?;
        let z = direction_label(spec, a).unwrap_or(*options.last().expect("dummy present"));
        let (next, r, _) = spec.step(&s, a)?;
        total += r;
        actions.push(a);
        options.push(z);
        states.push(spec.agent_one_hot(next.pos));
        s = next;
    }
    let demo = Demonstration { states, actions, context: Some(c.value.clone()), options: Some(options) };
    Ok((demo, total))
}

/// `generate_dataset`: `n` expert episodes on tasks drawn from the env
/// stream of `seed`. Context and options are stripped unless `annotate`.
pub fn generate_dataset(spec: &TaskSpec, n: usize, seed: u64, annotate: bool) -> Result<DemoSet> {
    if n == 0 {
        return Err(Error::contract("dataset size must be at least 1"));
    }
    let mut r = rng::derived(seed, rng::OFFSET_ENV, 0);
    let mut demos = Vec::with_capacity(n);
    for _ in 0..n {
        let c = spec.sample_task(&mut r);
        let (mut d, _) = expert_episode(spec, &c)?;
        if !annotate {
            d.context = None;
            d.options = None;
        }
        demos.push(d);
    }
    Ok(DemoSet { demos, meta: DemoMeta { env: String::from(spec.family.name()), seed, count: n } })
}

/// Mean hidden reward of the expert over the given tasks.
pub fn expert_mean_return(spec: &TaskSpec, tasks: &[TaskContext]) -> Result<f64> {
    let mut s = 0.0;
    for c in tasks {
        s += expert_episode(spec, c)?.1;
    }
    Ok(s / tasks.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid_state(x: usize, y: usize, gx: usize, gy: usize) -> EnvState {
        EnvState {
            pos: env::cell(x, y),
            goal: env::cell(gx, gy),
            t: 0,
            done: false,
            context: TaskContext::continuous(alloc::vec![0.0, 0.0]).unwrap(),
        }
    }

    #[test]
    fn l_shaped_rule() {
        let spec = TaskSpec::grid_multigoal();
        assert_eq!(script_expert_action(&spec, &grid_state(5, 5, 8, 3)).unwrap(), env::RIGHT);
        assert_eq!(script_expert_action(&spec, &grid_state(8, 5, 8, 3)).unwrap(), env::DOWN);
        assert_eq!(script_expert_action(&spec, &grid_state(8, 3, 8, 3)).unwrap(), env::STAY);
    }

    #[test]
    fn chain_expert_goes_right_for_task_one() {
        let spec = TaskSpec::tinychain();
        let (d, _) = expert_episode(&spec, &TaskContext::discrete(1, 2).unwrap()).unwrap();
        assert_eq!(d.actions, alloc::vec![env::CHAIN_RIGHT; 3]);
    }

    #[test]
    fn distance_six_goal_earns_nineteen() {
        let spec = TaskSpec::grid_multigoal();
        // goal (8, 2): round(5 + 2.5 * 1.2) = 8, round(5 - 2.5 * 1.2) = 2
        let c = TaskContext::continuous(alloc::vec![1.2, -1.2]).unwrap();
        assert_eq!(spec.xy(spec.goal_for(&c)), (8, 2));
        let (d, total) = expert_episode(&spec, &c).unwrap();
        assert_eq!(total, 19.0);
        assert_eq!(d.actions.len(), 24);
    }

    #[test]
    fn unannotated_sets_carry_nothing_latent() {
        let spec = TaskSpec::grid_multigoal();
        let set = generate_dataset(&spec, 100, 3, false).unwrap();
        assert!(set.demos.iter().all(|d| d.context.is_none() && d.options.is_none()));
        assert_eq!(set, generate_dataset(&spec, 100, 3, false).unwrap());
    }
}
