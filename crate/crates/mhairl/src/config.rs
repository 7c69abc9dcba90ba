//! `key = value` configuration files with `--key value` overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mhairl_core::discrim::DiscMode;
use mhairl_core::emtrain::{Ratio, TrainConfig, Variant};
use mhairl_core::env::TaskSpec;

use crate::error::{Error, Result};

/// Raw key/value pairs in a stable order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

fn normalize(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl KeyValues {
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", i + 1)));
            };
            let key = normalize(k);
            if key.is_empty() {
                return Err(Error::Config(format!("{origin}:{}: empty key", i + 1)));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("{origin}:{}: duplicate key `{key}`", i + 1)));
            }
        }
        Ok(KeyValues { map })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Applies `--key value` pairs; later pairs and overrides win over file values.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<()> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let Some(key) = flag.strip_prefix("--") else {
                return Err(Error::Config(format!("expected `--key value`, got `{flag}`")));
            };
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| Error::Config(format!("`--{key}` needs a value")))?;
                    (key.to_string(), v.clone())
                }
            };
            self.map.insert(normalize(&key), value);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(normalize(key), value.into());
    }

    pub fn contains(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    /// Rejects keys outside `allowed` and reports missing `required` keys, all at once.
    pub fn check(&self, allowed: &[&str], required: &[&str]) -> Result<()> {
        let unknown: Vec<&str> = self.map.keys().map(String::as_str).filter(|k| !allowed.contains(k)).collect();
        let missing: Vec<&str> = required.iter().copied().filter(|k| !self.map.contains_key(*k)).collect();
        let mut msg = Vec::new();
        if !unknown.is_empty() {
            msg.push(format!("unknown keys: {}", unknown.join(", ")));
        }
        if !missing.is_empty() {
            msg.push(format!("missing required keys: {}", missing.join(", ")));
        }
        if msg.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(msg.join("; ")))
        }
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|e| Error::Config(format!("`{key} = {v}`: {e}"))),
        }
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn list(&self, key: &str) -> Result<Option<Vec<usize>>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => parse_list(v).map(Some).map_err(|e| Error::Config(format!("`{key} = {v}`: {e}"))),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// `64,64`, or empty for no entries.
pub fn parse_list(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| s.trim().parse::<usize>().map_err(|e| format!("`{}`: {e}", s.trim()))).collect()
}

fn join(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

pub fn parse_ratio(v: &str) -> std::result::Result<Ratio, String> {
    let parts: Vec<&str> = v.split(':').collect();
    if parts.len() != 3 {
        return Err("expected `disc:policy:posterior`".into());
    }
    let n: Vec<usize> = parts.iter().map(|p| p.trim().parse::<usize>().map_err(|e| e.to_string())).collect::<std::result::Result<_, _>>()?;
    Ok(Ratio { disc: n[0], policy: n[1], posterior: n[2] })
}

pub fn parse_variant(v: &str) -> Option<Variant> {
    Variant::from_name(&v.trim().to_ascii_uppercase())
}

pub const TRAIN_REQUIRED: &[&str] =
    &["env", "variant", "demos", "episodes", "seed", "num_options", "alpha_mi", "alpha_di", "alpha_il", "ratio"];

pub const TRAIN_OPTIONAL: &[&str] = &[
    "name",
    "runs_dir",
    "embed_dim",
    "hidden",
    "heads",
    "trajectories",
    "lr_policy",
    "lr_baseline",
    "baseline_steps",
    "clip",
    "ppo_epochs",
    "ppo_minibatch",
    "standardize",
    "disc_mode",
    "gamma",
    "disc_lr",
    "disc_minibatch",
    "disc_hidden",
    "posterior_lr",
    "posterior_hidden",
    "posterior_head_hidden",
    "eval_every",
    "eval_tasks",
    "override_annotations",
];

/// Everything `train` needs: the algorithm configuration plus where the
/// demonstrations come from and where artifacts go.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSettings {
    pub name: String,
    pub runs_dir: PathBuf,
    pub demos: PathBuf,
    pub train: TrainConfig,
}

impl TrainSettings {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let mut allowed = TRAIN_REQUIRED.to_vec();
        allowed.extend_from_slice(TRAIN_OPTIONAL);
        kv.check(&allowed, TRAIN_REQUIRED)?;

        let env: String = kv.get("env")?.expect("required");
        let spec = TaskSpec::by_name(&env).map_err(|_| Error::Config(format!("`env = {env}`: unknown environment")))?;
        let vname = kv.raw("variant").expect("required");
        let variant = parse_variant(vname)
            .ok_or_else(|| Error::Config(format!("`variant = {vname}`: expected MH-AIRL, MH-GAIL or H-AIRL")))?;
        let seed: u64 = kv.get("seed")?.expect("required");
        let mut c = TrainConfig::new(spec, variant, seed);
        c.episodes = kv.get("episodes")?.expect("required");
        c.num_options = kv.get("num_options")?.expect("required");
        c.weights.alpha_mi = kv.get("alpha_mi")?.expect("required");
        c.weights.alpha_di = kv.get("alpha_di")?.expect("required");
        c.weights.alpha_il = kv.get("alpha_il")?.expect("required");
        let r = kv.raw("ratio").expect("required");
        c.ratio = parse_ratio(r).map_err(|e| Error::Config(format!("`ratio = {r}`: {e}")))?;

        c.embed = kv.get_or("embed_dim", c.embed)?;
        if let Some(h) = kv.list("hidden")? {
            c.policy_hidden = h;
        }
        c.heads = kv.get_or("heads", c.heads)?;
        c.ppo.trajectories = kv.get_or("trajectories", c.ppo.trajectories)?;
        c.ppo.lr_policy = kv.get_or("lr_policy", c.ppo.lr_policy)?;
        c.ppo.lr_baseline = kv.get_or("lr_baseline", c.ppo.lr_baseline)?;
        c.ppo.baseline_steps = kv.get_or("baseline_steps", c.ppo.baseline_steps)?;
        c.ppo.clip = kv.get_or("clip", c.ppo.clip)?;
        c.ppo.epochs = kv.get_or("ppo_epochs", c.ppo.epochs)?;
        c.ppo.minibatch = kv.get_or("ppo_minibatch", c.ppo.minibatch)?;
        c.ppo.standardize = kv.get_or("standardize", c.ppo.standardize)?;
        let gamma = kv.get_or("gamma", 0.99)?;
        c.disc_mode = match kv.raw("disc_mode").unwrap_or("state_only") {
            "state_only" => DiscMode::AirlStateOnly { gamma },
            "raw" => DiscMode::AirlRaw,
            other => return Err(Error::Config(format!("`disc_mode = {other}`: expected state_only or raw"))),
        };
        c.disc_lr = kv.get_or("disc_lr", c.disc_lr)?;
        c.disc_minibatch = kv.get_or("disc_minibatch", c.disc_minibatch)?;
        if let Some(h) = kv.list("disc_hidden")? {
            c.disc_hidden = h;
        }
        c.posterior_lr = kv.get_or("posterior_lr", c.posterior_lr)?;
        c.posterior_hidden = kv.get_or("posterior_hidden", c.posterior_hidden)?;
        c.posterior_head_hidden = kv.get_or("posterior_head_hidden", c.posterior_head_hidden)?;
        c.eval_every = kv.get_or("eval_every", c.eval_every)?;
        c.eval_tasks = kv.get_or("eval_tasks", c.eval_tasks)?;
        c.override_annotations = kv.get_or("override_annotations", c.override_annotations)?;
        c.validate().map_err(|e| Error::Config(e.to_string()))?;

        Ok(TrainSettings {
            name: kv.get_or("name", format!("{}-{}-s{seed}", env, variant.name().to_ascii_lowercase()))?,
            runs_dir: kv.get_or("runs_dir", PathBuf::from("runs"))?,
            demos: kv.get("demos")?.expect("required"),
            train: c,
        })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(&self.name)
    }

    /// Every effective key, defaults included; parsing this text back gives
    /// the same settings.
    pub fn echo(&self) -> String {
        let c = &self.train;
        let (mode, gamma) = match c.disc_mode {
            DiscMode::AirlStateOnly { gamma } => ("state_only", gamma),
            _ => ("raw", 0.99),
        };
        let rows: Vec<(&str, String)> = vec![
            ("name", self.name.clone()),
            ("runs_dir", self.runs_dir.display().to_string()),
            ("env", c.spec.family.name().to_string()),
            ("variant", c.variant.name().to_string()),
            ("demos", self.demos.display().to_string()),
            ("episodes", c.episodes.to_string()),
            ("seed", c.seed.to_string()),
            ("num_options", c.num_options.to_string()),
            ("alpha_mi", c.weights.alpha_mi.to_string()),
            ("alpha_di", c.weights.alpha_di.to_string()),
            ("alpha_il", c.weights.alpha_il.to_string()),
            ("ratio", format!("{}:{}:{}", c.ratio.disc, c.ratio.policy, c.ratio.posterior)),
            ("embed_dim", c.embed.to_string()),
            ("hidden", join(&c.policy_hidden)),
            ("heads", c.heads.to_string()),
            ("trajectories", c.ppo.trajectories.to_string()),
            ("lr_policy", c.ppo.lr_policy.to_string()),
            ("lr_baseline", c.ppo.lr_baseline.to_string()),
            ("baseline_steps", c.ppo.baseline_steps.to_string()),
            ("clip", c.ppo.clip.to_string()),
            ("ppo_epochs", c.ppo.epochs.to_string()),
            ("ppo_minibatch", c.ppo.minibatch.to_string()),
            ("standardize", c.ppo.standardize.to_string()),
            ("disc_mode", mode.to_string()),
            ("gamma", gamma.to_string()),
            ("disc_lr", c.disc_lr.to_string()),
            ("disc_minibatch", c.disc_minibatch.to_string()),
            ("disc_hidden", join(&c.disc_hidden)),
            ("posterior_lr", c.posterior_lr.to_string()),
            ("posterior_hidden", c.posterior_hidden.to_string()),
            ("posterior_head_hidden", c.posterior_head_hidden.to_string()),
            ("eval_every", c.eval_every.to_string()),
            ("eval_tasks", c.eval_tasks.to_string()),
            ("override_annotations", c.override_annotations.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = "env = tinychain\nvariant = MH-AIRL\ndemos = d.jsonl\nepisodes = 5\nseed = 3\n\
                       num_options = 2\nalpha_mi = 1\nalpha_di = 0.01\nalpha_il = 1\nratio = 1:3:10\n";

    #[test]
    fn comments_and_blank_lines() {
        let kv = KeyValues::parse("# top\n\n a = 1 # trailing\nb=x\n", "t").unwrap();
        assert_eq!(kv.raw("a"), Some("1"));
        assert_eq!(kv.raw("b"), Some("x"));
    }

    #[test]
    fn malformed_line_is_located() {
        let e = KeyValues::parse("a = 1\nnonsense\n", "cfg").unwrap_err();
        assert!(e.to_string().contains("cfg:2"), "{e}");
    }

    #[test]
    fn echo_round_trips() {
        let s = TrainSettings::from_kv(&KeyValues::parse(MIN, "t").unwrap()).unwrap();
        assert_eq!(s.train.ratio, Ratio { disc: 1, policy: 3, posterior: 10 });
        let again = TrainSettings::from_kv(&KeyValues::parse(&s.echo(), "echo").unwrap()).unwrap();
        assert_eq!(again, s);
        assert_eq!(again.echo(), s.echo());
    }

    #[test]
    fn ratio_forms() {
        assert!(parse_ratio("1:3").is_err());
        assert!(parse_ratio("1:x:3").is_err());
        assert_eq!(parse_ratio(" 2 : 1 : 0 ").unwrap(), Ratio { disc: 2, policy: 1, posterior: 0 });
    }
}
