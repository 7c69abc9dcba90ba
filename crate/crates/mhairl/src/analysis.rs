//! Option-usage statistics of evaluated trajectories.

use std::collections::BTreeMap;

use mhairl_core::env::{EnvState, TaskSpec};
use mhairl_core::expert::{direction_label, script_expert_action};
use mhairl_core::policy::HierTrajectory;
use serde::Serialize;

use crate::error::Result;

/// Number of movement directions on the grid.
pub const DIRECTIONS: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OptionStructure {
    /// `I(Z;L) / sqrt(H(Z) H(L))`, 0 when either side is constant.
    pub nmi: f64,
    /// Most frequent option per direction label; `None` if the label never occurs.
    pub majority: Vec<Option<usize>>,
    /// Number of different options among the majority options.
    pub distinct: usize,
    /// Steps counted (steps whose expert action is "stay" are skipped).
    pub steps: usize,
}

/// Pairs `(active option, expert direction)` for every step of `trajs`:
/// the option `Z_{t+1}` that chose `A_t`, and the direction the scripted
/// expert would move from `S_t` on the same task.
pub fn option_direction_pairs(spec: &TaskSpec, trajs: &[HierTrajectory]) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for tr in trajs {
        let goal = spec.goal_for(&tr.context);
        for t in 0..tr.len() {
            let s = EnvState { pos: tr.states[t], goal, t, done: false, context: tr.context.clone() };
            let a = script_expert_action(spec, &s)?;
            if let Some(l) = direction_label(spec, a) {
                out.push((tr.options[t + 1], l));
            }
        }
    }
    Ok(out)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts.filter(|&c| c > 0).map(|c| c as f64 / n).map(|p| -p * p.ln()).sum()
}

pub fn normalized_mutual_info(pairs: &[(usize, usize)]) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let n = pairs.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut za: BTreeMap<usize, usize> = BTreeMap::new();
    let mut la: BTreeMap<usize, usize> = BTreeMap::new();
    for &(z, l) in pairs {
        *joint.entry((z, l)).or_default() += 1;
        *za.entry(z).or_default() += 1;
        *la.entry(l).or_default() += 1;
    }
    let hz = entropy(za.values().copied(), n);
    let hl = entropy(la.values().copied(), n);
    if hz <= 0.0 || hl <= 0.0 {
        return 0.0;
    }
    let mi = hz + hl - entropy(joint.values().copied(), n);
    (mi / (hz * hl).sqrt()).clamp(0.0, 1.0)
}

pub fn option_structure(spec: &TaskSpec, trajs: &[HierTrajectory]) -> Result<OptionStructure> {
    let pairs = option_direction_pairs(spec, trajs)?;
    let mut per_dir: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); DIRECTIONS];
    for &(z, l) in &pairs {
        if l < DIRECTIONS {
            *per_dir[l].entry(z).or_default() += 1;
        }
    }
    let majority: Vec<Option<usize>> = per_dir
        .iter()
        .map(|m| m.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(&z, _)| z))
        .collect();
    let mut seen: Vec<usize> = majority.iter().flatten().copied().collect();
    seen.sort_unstable();
    seen.dedup();
    Ok(OptionStructure { nmi: normalized_mutual_info(&pairs), distinct: seen.len(), majority, steps: pairs.len() })
}

/// Maximal runs of one option along a trajectory: `(option, first step, last step)`
/// over steps `1..=T`.
pub fn option_segments(tr: &HierTrajectory) -> Vec<(usize, usize, usize)> {
    let mut out: Vec<(usize, usize, usize)> = Vec::new();
    for t in 1..tr.options.len() {
        let z = tr.options[t];
        match out.last_mut() {
            Some(seg) if seg.0 == z => seg.2 = t,
            _ => out.push((z, t, t)),
        }
    }
    out
}
