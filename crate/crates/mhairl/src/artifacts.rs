//! Run directory layout: `config.echo`, `metrics.csv`, `ckpt_*.params`,
//! `report.json` and `trajs.jsonl`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use mhairl_core::emtrain::{self, MetricsRow, RunResult, TrainConfig, Trainer, METRICS_HEADER};
use mhairl_core::env::{TaskContext, TaskSpec};
use mhairl_core::expert;
use mhairl_core::policy::{rollout_batch, HierPolicy, HierTrajectory, PolicyConfig, SampleMode};
use mhairl_core::rng::{self, Stream};
use mhairl_core::ParamSet;
use serde::Serialize;
use serde_json::json;

use crate::analysis::{self, OptionStructure};
use crate::config::{KeyValues, TrainSettings};
use crate::error::{Error, Result};

pub const CONFIG_ECHO: &str = "config.echo";
pub const METRICS: &str = "metrics.csv";
pub const CKPT_POLICY: &str = "ckpt_policy.params";
pub const CKPT_TASK_POSTERIOR: &str = "ckpt_task_posterior.params";
pub const CKPT_OPTION_POSTERIOR: &str = "ckpt_option_posterior.params";
pub const CKPT_DISC: &str = "ckpt_disc.params";
pub const REPORT: &str = "report.json";
pub const TRAJS: &str = "trajs.jsonl";

pub fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Appends metrics rows as they arrive.
pub struct MetricsWriter {
    path: PathBuf,
    file: fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        writeln!(file, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { path: path.to_path_buf(), file })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        writeln!(self.file, "{}", row.csv()).map_err(|e| Error::io(&self.path, e))
    }
}

/// Policy architecture a training configuration builds.
pub fn policy_config(c: &TrainConfig) -> PolicyConfig {
    let mut p = PolicyConfig::for_spec(&c.spec, c.num_options, c.variant.uses_context());
    p.embed = c.embed;
    p.hidden = c.policy_hidden.clone();
    p.heads = c.heads;
    p
}

pub fn save_checkpoints(dir: &Path, tr: &Trainer) -> Result<()> {
    write_file(&dir.join(CKPT_POLICY), &tr.policy.params.encode())?;
    if tr.posteriors.task.is_some() {
        write_file(&dir.join(CKPT_TASK_POSTERIOR), &tr.posteriors.task_params.encode())?;
    }
    write_file(&dir.join(CKPT_OPTION_POSTERIOR), &tr.posteriors.option_params.encode())?;
    write_file(&dir.join(CKPT_DISC), &tr.disc.params.encode())
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let text = read_file(path)?;
    ParamSet::decode(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), line: 1, msg: e.to_string() })
}

/// Settings and trained policy of a finished run directory.
pub fn load_run(dir: &Path) -> Result<(TrainSettings, HierPolicy)> {
    let settings = TrainSettings::from_kv(&KeyValues::load(&dir.join(CONFIG_ECHO))?)?;
    let path = dir.join(CKPT_POLICY);
    let params = load_params(&path)?;
    let mut policy = HierPolicy::new(policy_config(&settings.train), &mut rng::stream(0))?;
    let ours: Vec<(String, Vec<usize>)> = policy.params.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect();
    let theirs: Vec<(String, Vec<usize>)> = params.iter().map(|(_, n, t)| (n.to_string(), t.shape().to_vec())).collect();
    if ours != theirs {
        return Err(Error::Parse {
            path,
            line: 1,
            msg: "checkpoint does not match the architecture in config.echo".into(),
        });
    }
    policy.params = params;
    Ok((settings, policy))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryRecord {
    pub context: Vec<f64>,
    pub goal: usize,
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    /// `Z_0..Z_T`, `Z_0` the dummy option.
    pub options: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn new(spec: &TaskSpec, tr: &HierTrajectory) -> Self {
        TrajectoryRecord {
            context: tr.context.value.clone(),
            goal: spec.goal_for(&tr.context),
            states: tr.states.clone(),
            actions: tr.actions.clone(),
            options: tr.options.clone(),
            rewards: tr.env_rewards.clone(),
        }
    }
}

/// Argmax rollouts for a trajectory dump. Sparse families cycle through
/// their goals; the others use the held-out task stream of `seed`.
pub fn evaluated_trajectories(policy: &HierPolicy, spec: &TaskSpec, n: usize, seed: u64) -> Result<Vec<(TaskSpec, HierTrajectory)>> {
    let tasks = emtrain::eval_tasks(spec, seed, n);
    let mut out = Vec::with_capacity(n);
    for (i, c) in tasks.into_iter().enumerate() {
        let s = if spec.sparse { spec.with_goal(i) } else { spec.clone() };
        let mut r: Vec<Stream> = vec![rng::derived(seed, rng::OFFSET_POLICY, u64::MAX - i as u64)];
        let tr = rollout_batch(policy, &s, &[c], &mut r, SampleMode::Argmax)?.remove(0);
        out.push((s, tr));
    }
    Ok(out)
}

pub fn dump_trajectories(policy: &HierPolicy, spec: &TaskSpec, n: usize, seed: u64, path: &Path) -> Result<()> {
    let mut text = String::new();
    for (s, tr) in evaluated_trajectories(policy, spec, n, seed)? {
        text.push_str(&serde_json::to_string(&TrajectoryRecord::new(&s, &tr)).expect("plain data"));
        text.push('\n');
    }
    write_file(path, &text)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub env: String,
    pub episode: usize,
    pub mean_return: f64,
    pub expert_return: Option<f64>,
    pub tasks: Vec<TaskReport>,
    /// Fraction of steps spent in each option.
    pub option_usage: Vec<f64>,
    /// Present for GridMultiGoal.
    pub option_structure: Option<OptionStructure>,
}

#[derive(Clone, Debug, Serialize)]
pub struct TaskReport {
    pub context: Vec<f64>,
    pub goal: usize,
    pub mean_return: f64,
    /// `[option, first step, last step]` runs along the trajectory.
    pub segments: Vec<(usize, usize, usize)>,
}

/// Evaluates the argmax policy once per task and summarizes returns and option usage.
pub fn eval_report(policy: &HierPolicy, spec: &TaskSpec, tasks: &[TaskContext], seed: u64, episode: usize) -> Result<EvalReport> {
    let res = emtrain::evaluate_policy(policy, spec, tasks, seed, episode)?;
    let n = policy.cfg().num_options;
    let mut usage = vec![0.0; n];
    let mut steps = 0usize;
    for tr in &res.trajectories {
        for &z in &tr.options[1..] {
            usage[z] += 1.0;
            steps += 1;
        }
    }
    usage.iter_mut().for_each(|u| *u /= steps.max(1) as f64);
    let structure = match spec.family {
        mhairl_core::env::Family::GridMultiGoal => Some(analysis::option_structure(spec, &res.trajectories)?),
        _ => None,
    };
    Ok(EvalReport {
        env: spec.family.name().to_string(),
        episode,
        mean_return: res.mean_return,
        expert_return: expert::expert_mean_return(spec, tasks).ok().filter(|_| !spec.sparse),
        tasks: res
            .trajectories
            .iter()
            .map(|tr| TaskReport {
                context: tr.context.value.clone(),
                goal: spec.goal_for(&tr.context),
                mean_return: tr.total_env_reward(),
                segments: analysis::option_segments(tr),
            })
            .collect(),
        option_usage: usage,
        option_structure: structure,
    })
}

/// Writes every artifact of a finished training run except `metrics.csv`,
/// which the caller streams.
pub fn finish_run(dir: &Path, settings: &TrainSettings, tr: &Trainer, res: &RunResult) -> Result<EvalReport> {
    save_checkpoints(dir, tr)?;
    let tasks = tr.eval_tasks();
    let report = eval_report(&tr.policy, &settings.train.spec, &tasks, settings.train.seed, tr.episode())?;
    let curve: Vec<_> = res.evals.iter().map(|e| json!({"episode": e.episode, "mean_return": e.mean_return})).collect();
    let body = json!({"final": report, "eval_curve": curve, "expert_return": res.expert_return});
    write_file(&dir.join(REPORT), &serde_json::to_string_pretty(&body).expect("plain data"))?;
    dump_trajectories(&tr.policy, &settings.train.spec, settings.train.eval_tasks, settings.train.seed, &dir.join(TRAJS))?;
    Ok(report)
}
