//! Variational posteriors over the latent task and option codes.
//!
//! Both read the sequence `X_t = (A_{t-1}, S_t)`, `t = 0..T`, encoded as a
//! one-hot action (all zeros at `t = 0`) followed by a one-hot agent cell.
//!
//! * `P_ψ(C | X_{0:T})`: bidirectional GRU; the last forward and first
//!   backward states feed a linear head giving categorical logits or a
//!   diagonal Gaussian (mean, log-std).
//! * `P_ω(Z_t | X_{0:t}, Z_{0:t-1}, C)`: a causal GRU with
//!   `h_t = GRU([X_t, Z_{t-1}], h_{t-1})` (`h_{-1} = 0`, `Z_{-1}` all zero);
//!   the step-`t` head sees `[X_t, Z_{t-1}, C, h_{t-1}]`.
//!
//! Sequence outputs are laid out time-major: row `(t - 1) * B + b` holds
//! step `t` of trajectory `b`. Every batch must share one length.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::env::{ContextKind, TaskContext};
use crate::error::{Error, Result};
use crate::graph::{Graph, SparseRows, Var};
use crate::math;
use crate::nn::{self, Gru, Input, Linear};
use crate::params::{Adam, ParamId, ParamSet};
use crate::policy::{HierTrajectory, DUMMY_OPTION};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorConfig {
    pub num_cells: usize,
    pub num_actions: usize,
    pub num_options: usize,
    pub context: ContextKind,
    /// Whether `P_ω` sees the task context.
    pub option_uses_context: bool,
    pub hidden: usize,
    pub head_hidden: usize,
}

impl PosteriorConfig {
    fn x_width(&self) -> usize {
        self.num_actions + self.num_cells
    }
}

fn same_length(trajs: &[&HierTrajectory]) -> Result<usize> {
    let t = trajs.first().map(|t| t.len()).ok_or_else(|| Error::contract("empty trajectory batch"))?;
    if trajs.iter().any(|tr| tr.len() != t || tr.states.len() != t + 1) {
        return Err(Error::contract("posterior batches need trajectories of one length"));
    }
    Ok(t)
}

/// Sparse `X_t` entries of trajectory `tr` at time `t`.
fn x_entries(cfg: &PosteriorConfig, tr: &HierTrajectory, t: usize) -> Vec<(usize, f64)> {
    let mut row = Vec::with_capacity(3);
    if t > 0 {
        row.push((tr.actions[t - 1], 1.0));
    }
    row.push((cfg.num_actions + tr.states[t], 1.0));
    row
}

/// Distribution returned by the task posterior for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskDist {
    Categorical(Vec<f64>),
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

impl TaskDist {
    pub fn logprob(&self, c: &TaskContext) -> f64 {
        match self {
            TaskDist::Categorical(p) => math::ln(p[c.index().expect("discrete context")]),
            TaskDist::Gaussian { mean, log_std } => {
                nn::logprob_gaussian(mean, log_std, &c.value).expect("matching widths")
            }
        }
    }

    /// Draws a context; Gaussian draws use `mean + exp(log_std) * ε`.
    pub fn sample<R: RngCore + ?Sized>(&self, rng: &mut R) -> TaskContext {
        match self {
            TaskDist::Categorical(p) => {
                let i = rng::categorical(rng, p);
                TaskContext::discrete(i, p.len()).expect("index in range")
            }
            TaskDist::Gaussian { mean, log_std } => {
                let v = mean.iter().zip(log_std).map(|(&m, &ls)| m + math::exp(ls) * rng::normal(rng)).collect();
                TaskContext::continuous(v).expect("finite draw")
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaskPosteriorNet {
    pub cfg: PosteriorConfig,
    fwd: Gru,
    bwd: Gru,
    head: Linear,
}

impl TaskPosteriorNet {
    pub fn new<R: RngCore + ?Sized>(cfg: PosteriorConfig, p: &mut ParamSet, rng: &mut R) -> Result<Self> {
        let x = cfg.x_width();
        let fwd = Gru::new(p, "task.fwd", x, cfg.hidden, rng)?;
        let bwd = Gru::new(p, "task.bwd", x, cfg.hidden, rng)?;
        let out = match cfg.context {
            ContextKind::Discrete(n) => n,
            ContextKind::Continuous(d) => 2 * d,
        };
        let head = Linear::new_zero(p, "task.head", 2 * cfg.hidden, out)?;
        Ok(TaskPosteriorNet { cfg, fwd, bwd, head })
    }

    /// Head outputs `[B, |C|]` (logits) or `[B, 2d]` (mean then log-std).
    pub fn head_out(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> Result<Var> {
        let t_len = same_length(trajs)?;
        let b = trajs.len();
        let h = self.cfg.hidden;
        let mut sp = SparseRows::new(self.cfg.x_width());
        for t in 0..=t_len {
            for tr in trajs {
                sp.push_row(x_entries(&self.cfg, tr, t));
            }
        }
        let x = Input::Sparse(Rc::new(sp));
        let xf = self.fwd.project(g, p, &x);
        let xb = self.bwd.project(g, p, &x);
        let rows = |t: usize| -> Rc<[usize]> { (t * b..(t + 1) * b).collect() };
        let mut hf = g.constant(Tensor::zeros(&[b, h]));
        for t in 0..=t_len {
            let xt = g.gather_rows(xf, rows(t));
            hf = self.fwd.step_projected(g, p, xt, hf);
        }
        let mut hb = g.constant(Tensor::zeros(&[b, h]));
        for t in (0..=t_len).rev() {
            let xt = g.gather_rows(xb, rows(t));
            hb = self.bwd.step_projected(g, p, xt, hb);
        }
        let cat = g.concat_cols(&[hf, hb]);
        Ok(self.head.forward(g, p, &Input::Dense(cat)))
    }

    /// `log P_ψ(C_b | X_b)` per trajectory, `[B]`.
    pub fn logprob(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> Result<Var> {
        for tr in trajs {
            tr.context.validate(self.cfg.context)?;
        }
        let out = self.head_out(g, p, trajs)?;
        Ok(match self.cfg.context {
            ContextKind::Discrete(_) => {
                let idx: Rc<[usize]> = trajs.iter().map(|t| t.context.index().expect("validated")).collect();
                nn::categorical_logprob(g, out, idx)
            }
            ContextKind::Continuous(d) => {
                let mean = g.slice_cols(out, 0, d);
                let log_std = g.slice_cols(out, d, d);
                let mut data = Vec::with_capacity(trajs.len() * d);
                for tr in trajs {
                    data.extend_from_slice(&tr.context.value);
                }
                let x = g.constant(Tensor::new(vec![trajs.len(), d], data)?);
                nn::gaussian_logprob(g, mean, log_std, x)
            }
        })
    }

    pub fn distributions(&self, p: &ParamSet, trajs: &[&HierTrajectory]) -> Result<Vec<TaskDist>> {
        let mut g = Graph::new();
        let out = self.head_out(&mut g, p, trajs)?;
        let t = g.value(out);
        Ok((0..trajs.len())
            .map(|b| {
                let row = t.row(b);
                match self.cfg.context {
                    ContextKind::Discrete(_) => TaskDist::Categorical(math::softmax(row)),
                    ContextKind::Continuous(d) => TaskDist::Gaussian {
                        mean: row[..d].to_vec(),
                        log_std: row[d..].to_vec(),
                    },
                }
            })
            .collect())
    }
}

#[derive(Clone, Debug)]
pub struct OptionPosteriorNet {
    pub cfg: PosteriorConfig,
    gru: Gru,
    head_in: Linear,
    head_h: ParamId,
    head_out: Linear,
}

impl OptionPosteriorNet {
    pub fn new<R: RngCore + ?Sized>(cfg: PosteriorConfig, p: &mut ParamSet, rng: &mut R) -> Result<Self> {
        let n = cfg.num_options;
        let gru = Gru::new(p, "option.gru", cfg.x_width() + n, cfg.hidden, rng)?;
        let ctx = if cfg.option_uses_context { cfg.context.dim() } else { 0 };
        let sparse_in = cfg.x_width() + n + ctx;
        let fan_in = sparse_in + cfg.hidden;
        let w = p.add_uniform("option.head.in.w", &[sparse_in, cfg.head_hidden], fan_in, rng)?;
        let b = p.add_zeros("option.head.in.b", &[cfg.head_hidden])?;
        let head_in = Linear { w, b, inp: sparse_in, out: cfg.head_hidden };
        let head_h = p.add_uniform("option.head.h", &[cfg.hidden, cfg.head_hidden], fan_in, rng)?;
        let head_out = Linear::new_zero(p, "option.head.out", cfg.head_hidden, n)?;
        Ok(OptionPosteriorNet { cfg, gru, head_in, head_h, head_out })
    }

    fn ctx_dim(&self) -> usize {
        if self.cfg.option_uses_context {
            self.cfg.context.dim()
        } else {
            0
        }
    }

    fn gru_row(&self, tr: &HierTrajectory, t: usize, z_prev: Option<usize>) -> Vec<(usize, f64)> {
        let mut row = x_entries(&self.cfg, tr, t);
        if let Some(z) = z_prev {
            row.push((self.cfg.x_width() + z, 1.0));
        }
        row
    }

    fn head_row(&self, tr: &HierTrajectory, ctx: &[f64], t: usize, z_prev: usize) -> Vec<(usize, f64)> {
        let mut row = self.gru_row(tr, t, Some(z_prev));
        let off = self.cfg.x_width() + self.cfg.num_options;
        for (k, &c) in ctx.iter().enumerate().take(self.ctx_dim()) {
            if c != 0.0 {
                row.push((off + k, c));
            }
        }
        row
    }

    fn head(&self, g: &mut Graph, p: &ParamSet, sparse: SparseRows, h: Var) -> Var {
        let a = self.head_in.forward(g, p, &Input::Sparse(Rc::new(sparse)));
        let wh = g.param(p, self.head_h);
        let hb = g.matmul(h, wh);
        let s = g.add(a, hb);
        let act = g.tanh(s);
        self.head_out.forward(g, p, &Input::Dense(act))
    }

    fn sparse_head_width(&self) -> usize {
        self.cfg.x_width() + self.cfg.num_options + self.ctx_dim()
    }

    /// Option logits for steps `t = 1..T`, time-major `[T * B, N]`, given the
    /// options stored in the trajectories.
    pub fn logits(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> Result<Var> {
        let t_len = same_length(trajs)?;
        if t_len == 0 {
            return Err(Error::contract("option posterior needs at least one step"));
        }
        let b = trajs.len();
        let mut gsp = SparseRows::new(self.cfg.x_width() + self.cfg.num_options);
        for t in 0..t_len {
            for tr in trajs {
                let z_prev = if t == 0 { None } else { Some(tr.options[t - 1]) };
                gsp.push_row(self.gru_row(tr, t, z_prev));
            }
        }
        let xp = self.gru.project(g, p, &Input::Sparse(Rc::new(gsp)));
        let mut h = g.constant(Tensor::zeros(&[b, self.cfg.hidden]));
        let mut hs = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let rows: Rc<[usize]> = (t * b..(t + 1) * b).collect();
            let xt = g.gather_rows(xp, rows);
            h = self.gru.step_projected(g, p, xt, h);
            hs.push(h);
        }
        let hcat = if hs.len() == 1 { hs[0] } else { g.concat_rows(&hs) };
        let mut hsp = SparseRows::new(self.sparse_head_width());
        for t in 1..=t_len {
            for tr in trajs {
                hsp.push_row(self.head_row(tr, &tr.context.value, t, tr.options[t - 1]));
            }
        }
        Ok(self.head(g, p, hsp, hcat))
    }

    /// `log P_ω(Z_t | ·)` for `t = 1..T`, time-major `[T * B]`.
    pub fn logprob_seq(&self, g: &mut Graph, p: &ParamSet, trajs: &[&HierTrajectory]) -> Result<Var> {
        for tr in trajs {
            tr.validate(self.cfg.num_options)?;
        }
        let logits = self.logits(g, p, trajs)?;
        let t_len = trajs[0].len();
        let mut idx = Vec::with_capacity(t_len * trajs.len());
        for t in 1..=t_len {
            for tr in trajs {
                idx.push(tr.options[t]);
            }
        }
        Ok(nn::categorical_logprob(g, logits, idx.into()))
    }

    /// Per-trajectory step values from a time-major vector.
    pub fn split_time_major(values: &[f64], batch: usize) -> Vec<Vec<f64>> {
        let t_len = values.len() / batch;
        (0..batch).map(|b| (0..t_len).map(|t| values[t * batch + b]).collect()).collect()
    }

    /// Samples `Z_{1:T}` causally for each trajectory (contexts taken from
    /// the trajectories). Returns `Z_{0:T}` with the dummy prepended.
    pub fn sample(&self, p: &ParamSet, trajs: &[&HierTrajectory], rngs: &mut [Stream]) -> Result<Vec<Vec<usize>>> {
        let t_len = same_length(trajs)?;
        let b = trajs.len();
        assert_eq!(rngs.len(), b, "one stream per trajectory");
        let mut out: Vec<Vec<usize>> = vec![vec![DUMMY_OPTION]; b];
        let mut g = Graph::new();
        let mut h = g.constant(Tensor::zeros(&[b, self.cfg.hidden]));
        let n = self.cfg.num_options;
        for t in 0..=t_len {
            if t > 0 {
                let mut hsp = SparseRows::new(self.sparse_head_width());
                for (k, tr) in trajs.iter().enumerate() {
                    hsp.push_row(self.head_row(tr, &tr.context.value, t, out[k][t - 1]));
                }
                let logits = self.head(&mut g, p, hsp, h);
                let lv = g.value(logits).clone();
                for k in 0..b {
                    let probs = math::softmax(&lv.data()[k * n..(k + 1) * n]);
                    out[k].push(rng::categorical(&mut rngs[k], &probs));
                }
            }
            if t < t_len {
                let mut gsp = SparseRows::new(self.cfg.x_width() + n);
                for (k, tr) in trajs.iter().enumerate() {
                    let z_prev = if t == 0 { None } else { Some(out[k][t - 1]) };
                    gsp.push_row(self.gru_row(tr, t, z_prev));
                }
                h = self.gru.step(&mut g, p, &Input::Sparse(Rc::new(gsp)), h);
            }
        }
        Ok(out)
    }
}

/// Both posteriors with their parameters and optimizers.
#[derive(Clone, Debug)]
pub struct PosteriorPair {
    pub task: Option<TaskPosteriorNet>,
    pub task_params: ParamSet,
    pub option: OptionPosteriorNet,
    pub option_params: ParamSet,
    task_opt: Adam,
    option_opt: Adam,
}

/// Frozen posterior parameters used for E-step sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorSnapshot {
    pub task_params: ParamSet,
    pub option_params: ParamSet,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PosteriorLosses {
    pub task_nll: f64,
    pub option_nll: f64,
}

impl PosteriorPair {
    /// `with_task = false` drops `P_ψ` entirely (no task channel).
    pub fn new<R: RngCore + ?Sized>(cfg: PosteriorConfig, with_task: bool, lr: f64, rng: &mut R) -> Result<Self> {
        let mut task_params = ParamSet::new();
        let task = if with_task {
            Some(TaskPosteriorNet::new(cfg.clone(), &mut task_params, rng)?)
        } else {
            None
        };
        let mut option_params = ParamSet::new();
        let option = OptionPosteriorNet::new(cfg, &mut option_params, rng)?;
        Ok(PosteriorPair { task, task_params, option, option_params, task_opt: Adam::new(lr), option_opt: Adam::new(lr) })
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot { task_params: self.task_params.clone(), option_params: self.option_params.clone() }
    }

    /// Mean log-likelihood graphs for one batch: `(task, option)` scalar
    /// nodes, each the Monte-Carlo mean over trajectories (the option term
    /// sums over steps first).
    pub fn mean_loglik(
        &self,
        g_task: &mut Graph,
        g_opt: &mut Graph,
        task_params: &ParamSet,
        option_params: &ParamSet,
        batch: &[&HierTrajectory],
    ) -> Result<(Option<Var>, Var)> {
        let b = batch.len() as f64;
        let task = match &self.task {
            Some(net) => {
                let lp = net.logprob(g_task, task_params, batch)?;
                let s = g_task.sum(lp);
                Some(g_task.scale(s, 1.0 / b))
            }
            None => None,
        };
        let lo = self.option.logprob_seq(g_opt, option_params, batch)?;
        let s = g_opt.sum(lo);
        Ok((task, g_opt.scale(s, 1.0 / b)))
    }

    /// `fit_posteriors`: `steps` Adam ascent steps on both mean
    /// log-likelihoods over the full batch. Returns the mean negative
    /// log-likelihoods measured before the last update.
    pub fn fit(&mut self, batch: &[&HierTrajectory], steps: usize) -> Result<PosteriorLosses> {
        if batch.is_empty() {
            return Err(Error::contract("fit_posteriors on an empty batch"));
        }
        let mut losses = PosteriorLosses::default();
        for _ in 0..steps {
            let mut gt = Graph::new();
            let mut go = Graph::new();
            let (task, opt) = self.mean_loglik(&mut gt, &mut go, &self.task_params, &self.option_params, batch)?;
            if let Some(tv) = task {
                let nll = gt.neg(tv);
                losses.task_nll = gt.value(nll).item();
                let grads = gt.backward(nll)?;
                self.task_opt.step(&mut self.task_params, &grads);
            }
            let nll = go.neg(opt);
            losses.option_nll = go.value(nll).item();
            let grads = go.backward(nll)?;
            self.option_opt.step(&mut self.option_params, &grads);
        }
        Ok(losses)
    }

    /// Gradients of the two mean log-likelihoods (ascent direction).
    pub fn loglik_gradients(&self, batch: &[&HierTrajectory]) -> Result<(Option<Vec<f64>>, Vec<f64>)> {
        let mut gt = Graph::new();
        let mut go = Graph::new();
        let (task, opt) = self.mean_loglik(&mut gt, &mut go, &self.task_params, &self.option_params, batch)?;
        let tg = match task {
            Some(v) => Some(gt.backward(v)?.flatten(&self.task_params)),
            None => None,
        };
        Ok((tg, go.backward(opt)?.flatten(&self.option_params)))
    }
}

impl PosteriorSnapshot {
    /// E-step draws: `C ~ P_ψ̄(·|X)` (or the given context when there is no
    /// task channel), then `Z_{1:T} ~ P_ω̄(·|X, C)` causally.
    pub fn sample(
        &self,
        pair: &PosteriorPair,
        trajs: &[HierTrajectory],
        rngs: &mut [Stream],
    ) -> Result<Vec<HierTrajectory>> {
        let mut out: Vec<HierTrajectory> = trajs.to_vec();
        if let Some(net) = &pair.task {
            let refs: Vec<&HierTrajectory> = trajs.iter().collect();
            let dists = net.distributions(&self.task_params, &refs)?;
            for (k, d) in dists.iter().enumerate() {
                out[k].context = d.sample(&mut rngs[k]);
            }
        }
        let refs: Vec<&HierTrajectory> = out.iter().collect();
        let zs = pair.option.sample(&self.option_params, &refs, rngs)?;
        for (tr, z) in out.iter_mut().zip(zs) {
            tr.options = z;
        }
        Ok(out)
    }
}
