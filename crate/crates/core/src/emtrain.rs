//! The EM training loop: generate, fit posteriors, annotate the expert
//! data from a posterior snapshot, update the discriminator, update the
//! policy with HPPO.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::discrim::{DiscConfig, DiscMode, Discriminator, ExtendedPairs};
use crate::env::{TaskContext, TaskSpec};
use crate::error::{Error, Result};
use crate::expert::{self, Demonstration};
use crate::graph::Graph;
use crate::hppo::{self, Baselines, PpoConfig};
use crate::objective::{self, ObjectiveWeights};
use crate::params::Adam;
use crate::policy::{rollout_batch, HierPolicy, HierTrajectory, PolicyConfig, SampleMode};
use crate::posterior::{OptionPosteriorNet, PosteriorConfig, PosteriorPair};
use crate::rng::{self, Stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    MhAirl,
    MhGail,
    HAirl,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::MhAirl => "MH-AIRL",
            Variant::MhGail => "MH-GAIL",
            Variant::HAirl => "H-AIRL",
        }
    }

    pub fn from_name(s: &str) -> Option<Variant> {
        match s {
            "MH-AIRL" => Some(Variant::MhAirl),
            "MH-GAIL" => Some(Variant::MhGail),
            "H-AIRL" => Some(Variant::HAirl),
            _ => None,
        }
    }

    /// Whether the task context channel exists.
    pub fn uses_context(self) -> bool {
        self != Variant::HAirl
    }
}

/// Inner-step counts per episode: discriminator steps, policy passes
/// (each a full `ppo_update`), posterior steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub disc: usize,
    pub policy: usize,
    pub posterior: usize,
}

impl Default for Ratio {
    fn default() -> Self {
        Ratio { disc: 1, policy: 3, posterior: 10 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub spec: TaskSpec,
    pub variant: Variant,
    pub episodes: usize,
    pub seed: u64,
    pub num_options: usize,
    pub weights: ObjectiveWeights,
    pub ratio: Ratio,
    pub ppo: PpoConfig,
    /// AIRL discriminator form; the GAIL variant always uses the classifier.
    pub disc_mode: DiscMode,
    pub disc_lr: f64,
    /// Pairs per discriminator minibatch; a discriminator pass is one
    /// shuffled epoch over the generated pairs.
    pub disc_minibatch: usize,
    pub disc_hidden: Vec<usize>,
    pub posterior_lr: f64,
    pub posterior_hidden: usize,
    pub posterior_head_hidden: usize,
    pub embed: usize,
    pub policy_hidden: Vec<usize>,
    pub heads: usize,
    pub eval_every: usize,
    pub eval_tasks: usize,
    /// Re-sample latents even for demonstrations that carry them.
    pub override_annotations: bool,
}

impl TrainConfig {
    pub fn new(spec: TaskSpec, variant: Variant, seed: u64) -> Self {
        TrainConfig {
            spec,
            variant,
            episodes: 100,
            seed,
            num_options: 4,
            weights: ObjectiveWeights::default(),
            ratio: Ratio::default(),
            ppo: PpoConfig::default(),
            disc_mode: DiscMode::AirlStateOnly { gamma: 0.99 },
            disc_lr: 1e-3,
            disc_minibatch: 16,
            disc_hidden: vec![64, 64],
            posterior_lr: 1e-3,
            posterior_hidden: 32,
            posterior_head_hidden: 32,
            embed: 16,
            policy_hidden: vec![64, 64],
            heads: 2,
            eval_every: 10,
            eval_tasks: 16,
            override_annotations: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.ppo.validate()?;
        if self.num_options == 0 {
            return Err(Error::contract("num_options must be at least 1"));
        }
        if self.ratio.disc == 0 || self.ratio.policy == 0 {
            return Err(Error::contract("ratio: discriminator and policy passes must be at least 1"));
        }
        if self.spec.sparse {
            return Err(Error::contract(format!("{} is a reward-only task; use hppo_rl", self.spec.family.name())));
        }
        if !self.variant.uses_context() && self.weights.alpha_mi != 0.0 {
            return Err(Error::contract("H-AIRL has no task channel; alpha_mi must be 0"));
        }
        Ok(())
    }

    fn effective_disc_mode(&self) -> DiscMode {
        match self.variant {
            Variant::MhGail => DiscMode::Gail,
            _ => self.disc_mode,
        }
    }

    fn ctx_dim(&self) -> usize {
        if self.variant.uses_context() {
            self.spec.context_dim()
        } else {
            0
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub env_steps: u64,
    pub mean_return: f64,
    pub disc_loss: f64,
    pub l_mi: f64,
    pub l_di: f64,
    pub loss_high: f64,
    pub loss_low: f64,
    pub post_task_nll: f64,
    pub post_option_nll: f64,
}

pub const METRICS_HEADER: &str =
    "iteration,env_steps,mean_return,disc_loss,l_mi,l_di,loss_high,loss_low,post_task_nll,post_option_nll";

impl MetricsRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.iteration,
            self.env_steps,
            self.mean_return,
            self.disc_loss,
            self.l_mi,
            self.l_di,
            self.loss_high,
            self.loss_low,
            self.post_task_nll,
            self.post_option_nll
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub episode: usize,
    pub mean_return: f64,
    pub returns: Vec<f64>,
    pub trajectories: Vec<HierTrajectory>,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub policy: HierPolicy,
    pub posteriors: PosteriorPair,
    pub disc: Discriminator,
    baselines: Baselines,
    policy_opt: Adam,
    /// Expert data in learner form; latents are filled by the E-step.
    expert: Vec<HierTrajectory>,
    expert_annotated: bool,
    env_steps: u64,
    episode: usize,
    task_rng: Stream,
    mb_rng: Stream,
    /// Number of times the E-step sampled latents (zero on the supervised path).
    pub estep_calls: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, demos: &[Demonstration]) -> Result<Self> {
        cfg.validate()?;
        if demos.is_empty() {
            return Err(Error::contract("training needs at least one demonstration"));
        }
        let spec = &cfg.spec;
        let mut pcfg = PolicyConfig::for_spec(spec, cfg.num_options, cfg.variant.uses_context());
        pcfg.embed = cfg.embed;
        pcfg.hidden = cfg.policy_hidden.clone();
        pcfg.heads = cfg.heads;
        let policy = HierPolicy::new(pcfg, &mut rng::derived(cfg.seed, rng::OFFSET_INIT, 0))?;
        let post_cfg = PosteriorConfig {
            num_cells: spec.num_cells(),
            num_actions: spec.num_actions,
            num_options: cfg.num_options,
            context: spec.context,
            option_uses_context: cfg.variant.uses_context(),
            hidden: cfg.posterior_hidden,
            head_hidden: cfg.posterior_head_hidden,
        };
        let posteriors = PosteriorPair::new(
            post_cfg,
            cfg.variant.uses_context(),
            cfg.posterior_lr,
            &mut rng::derived(cfg.seed, rng::OFFSET_INIT, 2),
        )?;
        let dcfg = DiscConfig {
            num_cells: spec.num_cells(),
            num_actions: spec.num_actions,
            num_options: cfg.num_options,
            ctx_dim: cfg.ctx_dim(),
            hidden: cfg.disc_hidden.clone(),
            mode: cfg.effective_disc_mode(),
        };
        let disc = Discriminator::new(dcfg, cfg.disc_lr, &mut rng::derived(cfg.seed, rng::OFFSET_INIT, 3))?;
        let baselines = Baselines::new(
            spec.num_cells(),
            cfg.num_options,
            cfg.ctx_dim(),
            &cfg.policy_hidden,
            cfg.ppo.lr_baseline,
            &mut rng::derived(cfg.seed, rng::OFFSET_INIT, 4),
        )?;
        let expert_annotated = demos.iter().all(|d| d.is_annotated());
        let mut expert = Vec::with_capacity(demos.len());
        for (i, d) in demos.iter().enumerate() {
            let tr = d.to_trajectory(spec).map_err(|e| Error::contract(format!("demonstration {i}: {e}")))?;
            tr.validate(cfg.num_options).map_err(|e| Error::contract(format!("demonstration {i}: {e}")))?;
            expert.push(tr);
        }
        let t0 = expert[0].len();
        if expert.iter().any(|t| t.len() != t0) {
            return Err(Error::contract("demonstrations must share one length"));
        }
        Ok(Trainer {
            policy_opt: Adam::new(cfg.ppo.lr_policy),
            task_rng: rng::derived(cfg.seed, rng::OFFSET_ENV, 0),
            mb_rng: rng::derived(cfg.seed, rng::OFFSET_MINIBATCH, 0),
            cfg,
            policy,
            posteriors,
            disc,
            baselines,
            expert,
            expert_annotated,
            env_steps: 0,
            episode: 0,
            estep_calls: 0,
        })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    /// Current expert annotation (after the latest E-step).
    pub fn expert(&self) -> &[HierTrajectory] {
        &self.expert
    }

    /// `e_step`: latents for the expert data drawn from the snapshot, or the
    /// provided annotations when present and not overridden.
    pub fn e_step(&mut self, snapshot: &crate::posterior::PosteriorSnapshot) -> Result<()> {
        if self.expert_annotated && !self.cfg.override_annotations {
            return Ok(());
        }
        let base = (self.episode * self.expert.len()) as u64;
        let mut rngs: Vec<Stream> =
            (0..self.expert.len()).map(|j| rng::derived(self.cfg.seed, rng::OFFSET_ESTEP, base + j as u64)).collect();
        self.expert = snapshot.sample(&self.posteriors, &self.expert, &mut rngs)?;
        self.estep_calls += 1;
        Ok(())
    }

    fn generate(&mut self) -> Result<Vec<HierTrajectory>> {
        let m = self.cfg.ppo.trajectories;
        let contexts: Vec<TaskContext> = (0..m).map(|_| self.cfg.spec.sample_task(&mut self.task_rng)).collect();
        let mut rngs: Vec<Stream> = (0..m)
            .map(|i| rng::derived(self.cfg.seed, rng::OFFSET_POLICY, (self.episode * m + i) as u64))
            .collect();
        rollout_batch(&self.policy, &self.cfg.spec, &contexts, &mut rngs, SampleMode::Stochastic)
    }

    /// One shuffled epoch over the generated pairs, each minibatch matched
    /// with an equally sized random draw of expert pairs. Returns the mean
    /// minibatch loss.
    fn disc_epoch(&mut self, ep: &ExtendedPairs, gp: &ExtendedPairs) -> Result<f64> {
        let mb = self.cfg.disc_minibatch.max(1);
        let mut order: Vec<usize> = (0..gp.len()).collect();
        rng::shuffle(&mut self.mb_rng, &mut order);
        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(mb) {
            let g = gp.select(chunk);
            let pick: Vec<usize> = (0..chunk.len()).map(|_| rng::below(&mut self.mb_rng, ep.len())).collect();
            let e = ep.select(&pick);
            total += self.disc.train_step(&e, &g)?;
            steps += 1;
        }
        Ok(total / steps.max(1) as f64)
    }

    /// `train_episode`: one pass of the loop body.
    pub fn train_episode(&mut self) -> Result<MetricsRow> {
        let snapshot = self.posteriors.snapshot();
        let batch = self.generate()?;
        let refs: Vec<&HierTrajectory> = batch.iter().collect();
        self.env_steps += batch.iter().map(|t| t.len() as u64).sum::<u64>();

        let post = self.posteriors.fit(&refs, self.cfg.ratio.posterior)?;

        self.e_step(&snapshot)?;

        let ctx_dim = self.disc.cfg.ctx_dim;
        let expert_refs: Vec<&HierTrajectory> = self.expert.iter().collect();
        let ep = ExtendedPairs::from_trajectories(&expert_refs, &self.policy, ctx_dim);
        let gp = ExtendedPairs::from_trajectories(&refs, &self.policy, ctx_dim);
        let mut disc_loss = 0.0;
        for _ in 0..self.cfg.ratio.disc {
            disc_loss = self.disc_epoch(&ep, &gp)?;
        }

        let rewards = self.disc.rewards(&gp);
        let mut r_il = Vec::with_capacity(batch.len());
        let mut k = 0;
        for tr in &batch {
            r_il.push(rewards[k..k + tr.len()].to_vec());
            k += tr.len();
        }
        let task_lp = match &self.posteriors.task {
            Some(net) => {
                let mut g = Graph::new();
                let v = net.logprob(&mut g, &self.posteriors.task_params, &refs)?;
                Some(g.value(v).data().to_vec())
            }
            None => None,
        };
        let opt_lp = {
            let mut g = Graph::new();
            let v = self.posteriors.option.logprob_seq(&mut g, &self.posteriors.option_params, &refs)?;
            OptionPosteriorNet::split_time_major(g.value(v).data(), refs.len())
        };
        let l_mi = task_lp.as_ref().map_or(0.0, |v| objective::l_mi(v, self.cfg.spec.context));
        let logp_high: Vec<Vec<f64>> = batch.iter().map(|t| t.logp_high.clone()).collect();
        let l_di = objective::l_di(&opt_lp, &logp_high);
        let tables = hppo::returns_for(&refs, &r_il, task_lp.as_deref(), Some(&opt_lp), &self.cfg.weights)?;
        let adv = hppo::compute_advantages(&tables, &self.baselines, &refs, self.cfg.ppo.standardize);
        self.baselines.fit(&refs, &hppo::flatten_returns(&tables), self.cfg.ppo.baseline_steps)?;
        let mut losses = hppo::PpoLosses::default();
        for _ in 0..self.cfg.ratio.policy {
            losses = hppo::ppo_update(&mut self.policy, &mut self.policy_opt, &refs, &adv, &self.cfg.ppo, &mut self.mb_rng)?;
        }

        self.episode += 1;
        let mean_return = batch.iter().map(|t| t.total_env_reward()).sum::<f64>() / batch.len() as f64;
        Ok(MetricsRow {
            iteration: self.episode,
            env_steps: self.env_steps,
            mean_return,
            disc_loss,
            l_mi,
            l_di,
            loss_high: losses.loss_high,
            loss_low: losses.loss_low,
            post_task_nll: post.task_nll,
            post_option_nll: post.option_nll,
        })
    }

    /// Argmax rollouts of the current policy on the given tasks.
    pub fn evaluate(&self, tasks: &[TaskContext]) -> Result<EvalResult> {
        evaluate_policy(&self.policy, &self.cfg.spec, tasks, self.cfg.seed, self.episode)
    }

    /// Held-out evaluation tasks of this run.
    pub fn eval_tasks(&self) -> Vec<TaskContext> {
        eval_tasks(&self.cfg.spec, self.cfg.seed, self.cfg.eval_tasks)
    }
}

/// Fresh tasks from a stream disjoint from the training task stream.
pub fn eval_tasks(spec: &TaskSpec, seed: u64, n: usize) -> Vec<TaskContext> {
    let mut r = rng::derived(seed, rng::OFFSET_ENV, 1);
    (0..n).map(|_| spec.sample_task(&mut r)).collect()
}

pub fn evaluate_policy(
    policy: &HierPolicy,
    spec: &TaskSpec,
    tasks: &[TaskContext],
    seed: u64,
    episode: usize,
) -> Result<EvalResult> {
    let mut rngs: Vec<Stream> = (0..tasks.len()).map(|i| rng::derived(seed, rng::OFFSET_POLICY, u64::MAX - i as u64)).collect();
    let trajectories = rollout_batch(policy, spec, tasks, &mut rngs, SampleMode::Argmax)?;
    let returns: Vec<f64> = trajectories.iter().map(|t| t.total_env_reward()).collect();
    let mean_return = returns.iter().sum::<f64>() / returns.len().max(1) as f64;
    Ok(EvalResult { episode, mean_return, returns, trajectories })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalResult>,
    pub expert_return: f64,
}

/// `run`: trains for the configured episodes, evaluating every
/// `eval_every` episodes and once at the end. `on_row` sees each metrics
/// row as it is produced.
pub fn run(cfg: TrainConfig, demos: &[Demonstration], mut on_row: impl FnMut(&MetricsRow)) -> Result<(Trainer, RunResult)> {
    let mut trainer = Trainer::new(cfg, demos)?;
    let tasks = trainer.eval_tasks();
    let expert_return = expert::expert_mean_return(&trainer.cfg.spec, &tasks).unwrap_or(0.0);
    let mut metrics = Vec::with_capacity(trainer.cfg.episodes);
    let mut evals = Vec::new();
    for _ in 0..trainer.cfg.episodes {
        let row = trainer.train_episode()?;
        on_row(&row);
        metrics.push(row);
        let every = trainer.cfg.eval_every;
        if every > 0 && trainer.episode() % every == 0 && trainer.episode() < trainer.cfg.episodes {
            evals.push(trainer.evaluate(&tasks)?);
        }
    }
    evals.push(trainer.evaluate(&tasks)?);
    Ok((trainer, RunResult { metrics, evals, expert_return }))
}
