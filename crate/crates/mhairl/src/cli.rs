//! `mhairl <command> [CONFIG] [--key value ...]`

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mhairl_core::emtrain;
use mhairl_core::env::{Family, TaskSpec};
use mhairl_core::expert::generate_dataset;
use mhairl_core::hppo::PpoConfig;
use mhairl_core::policy::{HierPolicy, PolicyConfig};
use mhairl_core::rng;

use crate::artifacts::{self, MetricsWriter};
use crate::checks;
use crate::config::{parse_list, KeyValues, TrainSettings};
use crate::demos::{read_demos, write_demos};
use crate::error::{Error, Result};
use crate::experiments;

#[derive(Parser, Debug)]
#[command(name = "mhairl", version, about = "Multi-task hierarchical adversarial inverse RL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write scripted-expert demonstrations as JSONL.
    GenExpert(Invocation),
    /// Train on demonstrations and write a run directory.
    Train(Invocation),
    /// Evaluate a trained (or fresh) policy on held-out tasks.
    Eval(Invocation),
    /// Compare HPPO from scratch against a transferred initialization.
    Transfer(Invocation),
    /// Run the numerical verification suites.
    OracleCheck(Invocation),
}

#[derive(clap::Args, Debug)]
pub struct Invocation {
    /// Optional config file followed by `--key value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "CONFIG] [--KEY VALUE")]
    pub args: Vec<String>,
}

impl Invocation {
    /// Config file values with the overrides applied on top.
    pub fn settings(&self) -> Result<KeyValues> {
        let (mut kv, rest) = match self.args.first() {
            Some(first) if !first.starts_with("--") => (KeyValues::load(Path::new(first))?, &self.args[1..]),
            _ => (KeyValues::default(), &self.args[..]),
        };
        kv.apply_overrides(rest)?;
        Ok(kv)
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::GenExpert(inv) => gen_expert(&inv.settings()?),
        Command::Train(inv) => train(&inv.settings()?),
        Command::Eval(inv) => eval(&inv.settings()?),
        Command::Transfer(inv) => transfer(&inv.settings()?),
        Command::OracleCheck(inv) => oracle_check(&inv.settings()?),
    }
}

fn required<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    kv.get(key)?.ok_or_else(|| Error::Config(format!("missing required key `{key}`")))
}

fn spec_for(kv: &KeyValues) -> Result<TaskSpec> {
    let env: String = required(kv, "env")?;
    TaskSpec::by_name(&env).map_err(|_| Error::Config(format!("`env = {env}`: unknown environment")))
}

fn gen_expert(kv: &KeyValues) -> Result<()> {
    kv.check(&["env", "count", "seed", "out", "annotate"], &["env", "count", "seed", "out"])?;
    let spec = spec_for(kv)?;
    if spec.sparse {
        return Err(Error::Config(format!("`env = {}`: reward-only task without an expert", spec.family.name())));
    }
    let count: usize = required(kv, "count")?;
    if count == 0 {
        return Err(Error::Config("`count` must be at least 1".into()));
    }
    let out: PathBuf = required(kv, "out")?;
    let set = generate_dataset(&spec, count, required(kv, "seed")?, kv.get_or("annotate", false)?)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_demos(&set, &out)?;
    println!("wrote {count} demonstrations to {}", out.display());
    Ok(())
}

fn train(kv: &KeyValues) -> Result<()> {
    let settings = TrainSettings::from_kv(kv)?;
    let set = read_demos(&settings.demos)?;
    let env = settings.train.spec.family.name();
    if !set.meta.env.is_empty() && set.meta.env != env {
        return Err(Error::Config(format!(
            "{}: demonstrations are for `{}`, config says `{env}`",
            settings.demos.display(),
            set.meta.env
        )));
    }
    let dir = settings.run_dir();
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    artifacts::write_file(&dir.join(artifacts::CONFIG_ECHO), &settings.echo())?;
    let mut metrics = MetricsWriter::create(&dir.join(artifacts::METRICS))?;
    let mut write_err = None;
    let (tr, res) = emtrain::run(settings.train.clone(), &set.demos, |row| {
        if write_err.is_none() {
            write_err = metrics.push(row).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let report = artifacts::finish_run(&dir, &settings, &tr, &res)?;
    println!(
        "{}: {} episodes, final mean return {:.3} (expert {:.3}), artifacts in {}",
        settings.name,
        settings.train.episodes,
        report.mean_return,
        res.expert_return,
        dir.display()
    );
    Ok(())
}

fn eval(kv: &KeyValues) -> Result<()> {
    kv.check(&["run", "env", "num_options", "tasks", "seed", "out", "dump"], &[])?;
    let (spec, policy, seed, default_out) = match kv.get::<PathBuf>("run")? {
        Some(dir) => {
            if kv.contains("env") || kv.contains("num_options") {
                return Err(Error::Config("`env` and `num_options` come from the run directory".into()));
            }
            let (s, p) = artifacts::load_run(&dir)?;
            let seed = kv.get_or("seed", s.train.seed)?;
            (s.train.spec, p, seed, dir.join(artifacts::REPORT))
        }
        None => {
            let spec = spec_for(kv)?;
            let seed = kv.get_or("seed", 0u64)?;
            let cfg = PolicyConfig::for_spec(&spec, kv.get_or("num_options", 4usize)?, true);
            let p = HierPolicy::new(cfg, &mut rng::derived(seed, rng::OFFSET_INIT, 0))?;
            (spec, p, seed, PathBuf::from(artifacts::REPORT))
        }
    };
    let tasks = emtrain::eval_tasks(&spec, seed, kv.get_or("tasks", 16usize)?);
    let report = artifacts::eval_report(&policy, &spec, &tasks, seed, 0)?;
    let out: PathBuf = kv.get_or("out", default_out)?;
    artifacts::write_file(&out, &serde_json::to_string_pretty(&report).expect("plain data"))?;
    if let Some(dump) = kv.get::<PathBuf>("dump")? {
        artifacts::dump_trajectories(&policy, &spec, tasks.len(), seed, &dump)?;
    }
    match report.expert_return {
        Some(e) => println!("mean return {:.3} over {} tasks (expert {e:.3})", report.mean_return, tasks.len()),
        None => println!("mean return {:.3} over {} tasks", report.mean_return, tasks.len()),
    }
    Ok(())
}

fn transfer(kv: &KeyValues) -> Result<()> {
    kv.check(
        &["source", "env", "goals", "seeds", "episodes", "trajectories", "lr_policy", "out"],
        &["source", "env"],
    )?;
    let source: PathBuf = required(kv, "source")?;
    let spec = spec_for(kv)?;
    if !matches!(spec.family, Family::PointRoom | Family::PointMaze) {
        return Err(Error::Config(format!("`env = {}`: transfer targets are point_room and point_maze", spec.family.name())));
    }
    let (settings, policy) = artifacts::load_run(&source)?;
    if !settings.train.variant.uses_context() || settings.train.spec.num_cells() != spec.num_cells() {
        return Err(Error::Config(format!("{}: source policy does not fit {}", source.display(), spec.family.name())));
    }
    let goals: Vec<usize> = (0..kv.get_or("goals", 4usize)?).collect();
    let seeds: Vec<u64> = kv
        .raw("seeds")
        .map(parse_list)
        .transpose()
        .map_err(|e| Error::Config(format!("`seeds`: {e}")))?
        .unwrap_or_else(|| vec![0, 1, 2, 3, 4])
        .into_iter()
        .map(|s| s as u64)
        .collect();
    let mut ppo = PpoConfig::default();
    ppo.trajectories = kv.get_or("trajectories", ppo.trajectories)?;
    ppo.lr_policy = kv.get_or("lr_policy", ppo.lr_policy)?;
    let episodes = kv.get_or("episodes", 100usize)?;
    let cases = experiments::transfer(spec.family, &policy.params, policy.cfg(), &goals, &seeds, episodes, &ppo)?;
    let out: PathBuf = kv.get_or("out", PathBuf::from("transfer.csv"))?;
    artifacts::write_file(&out, &experiments::transfer_csv(&cases))?;
    let rep = experiments::summarize(cases);
    println!(
        "{}: median episodes to first success, scratch {} vs transferred {} ({} runs); curves in {}",
        spec.family.name(),
        rep.median_scratch,
        rep.median_transferred,
        rep.cases.len(),
        out.display()
    );
    Ok(())
}

const SUITES: &[&str] = &["gradcheck", "bounds", "unbiasedness", "identity", "optimum"];

fn oracle_check(kv: &KeyValues) -> Result<()> {
    kv.check(&["suites", "points", "draws", "samples", "seed", "disc_steps", "inject_fault"], &[])?;
    let suites: Vec<String> = match kv.raw("suites") {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
        None => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    if let Some(bad) = suites.iter().find(|s| !SUITES.contains(&s.as_str())) {
        return Err(Error::Config(format!("`suites`: unknown suite `{bad}` (known: {})", SUITES.join(", "))));
    }
    let seed = kv.get_or("seed", 0u64)?;
    let fault = kv.get_or("inject_fault", 0.0f64)?;
    let mut rows: Vec<(String, bool, String)> = Vec::new();
    for s in &suites {
        match s.as_str() {
            "gradcheck" => {
                for (name, r) in checks::full_gradcheck(kv.get_or("points", 100usize)?, seed)? {
                    let ok = r.max_rel_err < checks::GRADCHECK_TOL;
                    rows.push((format!("gradcheck {name}"), ok, format!("max rel err {:.2e} over {}", r.max_rel_err, r.checked)));
                }
            }
            "bounds" => {
                let b = checks::lower_bounds(kv.get_or("draws", 100usize)?, seed, fault)?;
                rows.push(("L^MI <= I(X;C)".into(), b.min_slack_mi >= -1e-9, format!("min slack {:.3e}", b.min_slack_mi)));
                rows.push(("L^DI <= I(X->Z|C)".into(), b.min_slack_di >= -1e-9, format!("min slack {:.3e}", b.min_slack_di)));
                rows.push(("Bayes L^MI = I(X;C)".into(), b.bayes_gap <= 1e-9, format!("gap {:.3e}", b.bayes_gap)));
            }
            "unbiasedness" => {
                for c in checks::unbiasedness(kv.get_or("samples", 100_000usize)?, seed, fault)? {
                    rows.push((
                        format!("unbiased {}", c.name),
                        c.passed(),
                        format!(
                            "{} of {} outside 3 SE (chance {:.2}), max |z| {:.2}, |grad| {:.3e}",
                            c.outside,
                            c.random_coords,
                            c.expected_outside(),
                            c.max_abs_z,
                            c.target_norm
                        ),
                    ));
                }
            }
            "identity" => {
                let ok = checks::posterior_gradient_identity(seed)?;
                rows.push(("posterior gradient identity".into(), ok, "bitwise".into()));
            }
            "optimum" => {
                let steps = kv.get_or("disc_steps", 5000usize)?;
                let o = checks::discriminator_optimum(seed, steps)?;
                rows.push((
                    "discriminator optimum".into(),
                    o.passed(steps),
                    format!("max |D - D*| {:.4} after {} steps over {} pairs", o.max_deviation, o.steps, o.pairs_checked),
                ));
            }
            _ => unreachable!("suite names checked above"),
        }
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0);
    for (name, ok, detail) in &rows {
        println!("{:<width$}  {}  {detail}", name, if *ok { "PASS" } else { "FAIL" });
    }
    let failed = rows.iter().filter(|r| !r.1).count();
    if failed > 0 {
        return Err(Error::CheckFailed(format!("{failed} of {} checks failed", rows.len())));
    }
    Ok(())
}
