//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::agent::{Mode, TrainConfig};
use crate::error::{Error, Result};

use super::data::{DatasetSpec, Pairing, Source};

/// Environment variable naming the directory runs are created under.
pub const OUTPUT_ROOT_VAR: &str = "SPAC_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    /// `None` resolves to `$SPAC_OUTPUT_ROOT/<run_id>` (or `runs/<run_id>`).
    pub output_dir: Option<PathBuf>,
    /// Environment-step budget.
    pub steps: u64,
    pub checkpoint_every: u64,
    /// Checkpoints kept on disk, newest first.
    pub keep_checkpoints: usize,
    pub eval_every: u64,
    pub deterministic: bool,
    /// Per-step displacement cap; `None` means a tenth of the image width.
    pub max_step_disp: Option<f64>,
    pub train: TrainConfig,
    pub data: DatasetSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        Self {
            run_id: "run".into(),
            output_dir: None,
            steps: 30_000,
            checkpoint_every: 5_000,
            keep_checkpoints: 2,
            eval_every: 0,
            deterministic: true,
            max_step_disp: None,
            train: TrainConfig::for_width(data.image_size),
            data,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{value}`"))),
    }
}

/// Every recognised key, in echo order.
pub const KEYS: &[&str] = &[
    "run_id",
    "output_dir",
    "steps",
    "checkpoint_every",
    "keep_checkpoints",
    "eval_every",
    "deterministic",
    "mode",
    "seed",
    "gamma",
    "tau",
    "plan_dim",
    "max_step_disp",
    "lambda",
    "horizon",
    "batch_size",
    "pool_capacity",
    "lr_critic",
    "lr_planner",
    "lr_reg",
    "lr_alpha",
    "init_alpha",
    "grad_steps_per_env_step",
    "source",
    "image_size",
    "train_pairs",
    "eval_pairs",
    "atlases",
    "pairing",
    "rotation_deg",
    "scale_min",
    "scale_max",
    "elastic_sigma",
    "elastic_amplitude",
    "data_seed",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let t = &mut self.train;
        let d = &mut self.data;
        match key {
            "run_id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(Error::Config(format!("run_id `{v}` must be a non-empty file name")));
                }
                self.run_id = v.to_owned();
            }
            "output_dir" => self.output_dir = (!v.is_empty() && v != "auto").then(|| PathBuf::from(v)),
            "steps" => self.steps = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "keep_checkpoints" => self.keep_checkpoints = parse(key, v)?,
            "eval_every" => self.eval_every = parse(key, v)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "mode" => t.mode = v.parse()?,
            "seed" => t.seed = parse(key, v)?,
            "gamma" => t.gamma = parse(key, v)?,
            "tau" => t.tau = parse(key, v)?,
            "plan_dim" => t.plan_dim = parse(key, v)?,
            "max_step_disp" => self.max_step_disp = if v == "auto" { None } else { Some(parse(key, v)?) },
            "lambda" => t.lambda = parse(key, v)?,
            "horizon" => t.horizon = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "pool_capacity" => t.pool_capacity = parse(key, v)?,
            "lr_critic" => t.lr_critic = parse(key, v)?,
            "lr_planner" => t.lr_planner = parse(key, v)?,
            "lr_reg" => t.lr_reg = parse(key, v)?,
            "lr_alpha" => t.lr_alpha = parse(key, v)?,
            "init_alpha" => t.init_alpha = parse(key, v)?,
            "grad_steps_per_env_step" => t.grad_steps_per_env_step = parse(key, v)?,
            "source" => {
                d.source = match v {
                    "synthetic" => Source::Synthetic,
                    _ => match v.strip_prefix("idx:") {
                        Some(p) if !p.is_empty() => Source::Idx(PathBuf::from(p)),
                        _ => {
                            return Err(Error::Config(format!(
                                "`source`: expected synthetic or idx:<path>, got `{v}`"
                            )))
                        }
                    },
                }
            }
            "image_size" => d.image_size = parse(key, v)?,
            "train_pairs" => d.train_pairs = parse(key, v)?,
            "eval_pairs" => d.eval_pairs = parse(key, v)?,
            "atlases" => d.atlases = parse(key, v)?,
            "pairing" => d.pairing = v.parse::<Pairing>()?,
            "rotation_deg" => d.rotation_deg = parse(key, v)?,
            "scale_min" => d.scale_min = parse(key, v)?,
            "scale_max" => d.scale_max = parse(key, v)?,
            "elastic_sigma" => d.elastic_sigma = parse(key, v)?,
            "elastic_amplitude" => d.elastic_amplitude = parse(key, v)?,
            "data_seed" => d.seed = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        let d = &self.data;
        Some(match key {
            "run_id" => self.run_id.clone(),
            "output_dir" => self
                .output_dir
                .as_ref()
                .map_or_else(|| "auto".into(), |p| p.display().to_string()),
            "steps" => self.steps.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "keep_checkpoints" => self.keep_checkpoints.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "deterministic" => self.deterministic.to_string(),
            "mode" => t.mode.as_str().into(),
            "seed" => t.seed.to_string(),
            "gamma" => t.gamma.to_string(),
            "tau" => t.tau.to_string(),
            "plan_dim" => t.plan_dim.to_string(),
            "max_step_disp" => self.max_step_disp.map_or_else(|| "auto".into(), |v| v.to_string()),
            "lambda" => t.lambda.to_string(),
            "horizon" => t.horizon.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "pool_capacity" => t.pool_capacity.to_string(),
            "lr_critic" => t.lr_critic.to_string(),
            "lr_planner" => t.lr_planner.to_string(),
            "lr_reg" => t.lr_reg.to_string(),
            "lr_alpha" => t.lr_alpha.to_string(),
            "init_alpha" => t.init_alpha.to_string(),
            "grad_steps_per_env_step" => t.grad_steps_per_env_step.to_string(),
            "source" => match &d.source {
                Source::Synthetic => "synthetic".into(),
                Source::Idx(p) => format!("idx:{}", p.display()),
            },
            "image_size" => d.image_size.to_string(),
            "train_pairs" => d.train_pairs.to_string(),
            "eval_pairs" => d.eval_pairs.to_string(),
            "atlases" => d.atlases.to_string(),
            "pairing" => d.pairing.as_str().into(),
            "rotation_deg" => d.rotation_deg.to_string(),
            "scale_min" => d.scale_min.to_string(),
            "scale_max" => d.scale_max.to_string(),
            "elastic_sigma" => d.elastic_sigma.to_string(),
            "elastic_amplitude" => d.elastic_amplitude.to_string(),
            "data_seed" => d.seed.to_string(),
            _ => return None,
        })
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got `{raw}`", n + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }

    /// Every key with its value, one per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{k} = {}", self.get(k).expect("known key"));
        }
        out
    }

    /// Checks both halves and resolves the step cap against the image width.
    pub fn resolved_train(&self, width: usize) -> Result<TrainConfig> {
        let mut t = self.train.clone();
        t.max_step_disp = self.max_step_disp.unwrap_or(0.1 * width as f64);
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.resolved_train(self.data.image_size)?;
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.keep_checkpoints == 0 {
            return Err(Error::Config("keep_checkpoints must be positive".into()));
        }
        if self.train.grad_steps_per_env_step == 0 {
            return Err(Error::Config("grad_steps_per_env_step must be positive".into()));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| {
            std::env::var_os(OUTPUT_ROOT_VAR)
                .map_or_else(|| PathBuf::from("runs"), PathBuf::from)
                .join(&self.run_id)
        })
    }

    /// Keys whose values may differ between a checkpoint and the run resuming it.
    pub fn resumable_keys() -> &'static [&'static str] {
        &["output_dir", "steps", "checkpoint_every", "keep_checkpoints", "eval_every"]
    }

    /// Differences from `other` outside [`Self::resumable_keys`].
    pub fn diff_for_resume(&self, other: &Self) -> Vec<String> {
        KEYS.iter()
            .filter(|k| !Self::resumable_keys().contains(k))
            .filter_map(|k| {
                let (a, b) = (self.get(k)?, other.get(k)?);
                (a != b).then(|| format!("{k}: {a} != {b}"))
            })
            .collect()
    }

    pub fn mode(&self) -> Mode {
        self.train.mode
    }
}
