//! Flat `key = value` experiment configuration with section prefixes.
//!
//! Sources are applied in order: defaults, config file, preset, `SMAUG_*`
//! environment variables, then command-line flags. Every key has a default
//! except `env.name`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use smaug_core::env::{ChainConfig, EnvConfig, MatrixGameConfig, SwitchingGoalsConfig};
use smaug_core::trainer::TrainConfig;

/// Prefix of environment variables that override config keys.
/// `SMAUG_TRAIN__LR=1e-3` sets `train.lr`.
pub const ENV_PREFIX: &str = "SMAUG_";

pub const ENV_NAMES: [&str; 3] = ["switching_goals", "matrix_game", "chain"];

pub const PRESETS: [&str; 6] = ["full", "qmix-ablation", "iql", "no-window", "no-intrinsic", "no-inference"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{field}: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl From<smaug_core::Error> for ConfigError {
    fn from(e: smaug_core::Error) -> Self {
        match e {
            smaug_core::Error::Config { field, reason } => Self { field, reason },
            other => Self::new("config", other.to_string()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub out_dir: PathBuf,
    /// `None` until `env.name` is given.
    pub env: Option<EnvConfig>,
    pub train: TrainConfig,
    /// Episodes between intermediate checkpoints; 0 keeps only the final one.
    pub checkpoint_interval: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            out_dir: PathBuf::from("runs"),
            env: None,
            train: TrainConfig::default(),
            checkpoint_interval: 0,
        }
    }
}

struct Field {
    key: &'static str,
    get: fn(&ExperimentConfig) -> String,
    set: fn(&mut ExperimentConfig, &str) -> Result<(), String>,
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.trim().parse().map_err(|e: T::Err| format!("cannot parse {v:?}: {e}"))
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    let v = v.trim();
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(parse).collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

macro_rules! field {
    ($key:literal, $($path:ident).+) => {
        Field {
            key: $key,
            get: |c| c.$($path).+.to_string(),
            set: |c, v| {
                c.$($path).+ = parse(v)?;
                Ok(())
            },
        }
    };
}

fn fields() -> Vec<Field> {
    vec![
        Field {
            key: "run.id",
            get: |c| c.run_id.clone(),
            set: |c, v| {
                c.run_id = v.trim().to_string();
                Ok(())
            },
        },
        Field {
            key: "run.out_dir",
            get: |c| c.out_dir.display().to_string(),
            set: |c, v| {
                c.out_dir = PathBuf::from(v.trim());
                Ok(())
            },
        },
        Field {
            key: "run.seeds",
            get: |c| join(&c.train.seeds),
            set: |c, v| {
                c.train.seeds = parse_list(v)?;
                Ok(())
            },
        },
        field!("run.checkpoint_interval", checkpoint_interval),
        field!("model.embed_dim", train.window.embed_dim),
        field!("model.hidden_dim", train.window.hidden_dim),
        field!("model.n_window", train.window.n_window),
        field!("model.n_heads", train.window.n_heads),
        field!("model.head_dim", train.window.head_dim),
        field!("model.temperature", train.window.temperature),
        field!("model.per_window_encoders", train.window.per_window_encoders),
        field!("mixer.mix_dim", train.mixer.mix_dim),
        field!("mixer.hyper_hidden", train.mixer.hyper_hidden),
        field!("intrinsic.beta1", train.intrinsic.beta1),
        field!("intrinsic.beta2", train.intrinsic.beta2),
        field!("intrinsic.hidden_dim", train.intrinsic.hidden_dim),
        field!("inference.embed_dim", train.world.embed_dim),
        field!("inference.hidden_dim", train.world.hidden_dim),
        field!("inference.n_f_step", train.world.n_f_step),
        field!("inference.beta_o", train.world.beta_o),
        field!("inference.beta_r", train.world.beta_r),
        field!("inference.use_at_execution", train.world.use_at_execution),
        field!("train.gamma", train.td.gamma),
        field!("train.beta_mi", train.td.beta_mi),
        field!("train.beta_f", train.td.beta_f),
        field!("train.epsilon_start", train.epsilon.start),
        field!("train.epsilon_end", train.epsilon.end),
        field!("train.epsilon_anneal_steps", train.epsilon.anneal_steps),
        field!("train.n_parallel_envs", train.n_parallel_envs),
        field!("train.batch_size", train.batch_size),
        field!("train.buffer_capacity", train.buffer_capacity),
        field!("train.inference_capacity", train.inference_capacity),
        field!("train.inference_batch", train.inference_batch),
        field!("train.lr", train.lr),
        field!("train.rms_alpha", train.rms_alpha),
        field!("train.rms_eps", train.rms_eps),
        field!("train.grad_clip", train.grad_clip),
        field!("train.target_update_interval", train.target_update_interval),
        field!("train.t_max", train.t_max),
        field!("train.eval_interval", train.eval_interval),
        field!("train.eval_episodes", train.eval_episodes),
        field!("ablation.disable_window", train.window.disable_window),
        field!("ablation.disable_intrinsic", train.disable_intrinsic),
        field!("ablation.disable_inference", train.disable_inference),
        field!("ablation.disable_mixer", train.disable_mixer),
    ]
}

struct EnvField {
    key: &'static str,
    get: fn(&EnvConfig) -> String,
    set: fn(&mut EnvConfig, &str) -> Result<(), String>,
}

macro_rules! env_field {
    ($variant:ident, $key:literal, $($path:tt).+) => {
        EnvField {
            key: $key,
            get: |e| match e {
                EnvConfig::$variant(c) => c.$($path).+.to_string(),
                _ => unreachable!("field table matches the variant"),
            },
            set: |e, v| match e {
                EnvConfig::$variant(c) => {
                    c.$($path).+ = parse(v)?;
                    Ok(())
                }
                _ => unreachable!("field table matches the variant"),
            },
        }
    };
}

fn env_fields(env: &EnvConfig) -> Vec<EnvField> {
    match env {
        EnvConfig::SwitchingGoals(_) => vec![
            env_field!(SwitchingGoals, "grid_size", grid_size),
            env_field!(SwitchingGoals, "n_agents", n_agents),
            env_field!(SwitchingGoals, "n_goal_sites", n_goal_sites),
            env_field!(SwitchingGoals, "switch_min", switch_interval.0),
            env_field!(SwitchingGoals, "switch_max", switch_interval.1),
            env_field!(SwitchingGoals, "capture_reward", capture_reward),
            env_field!(SwitchingGoals, "step_penalty", step_penalty),
            env_field!(SwitchingGoals, "occupancy_reward", occupancy_reward),
            env_field!(SwitchingGoals, "view_radius", view_radius),
            env_field!(SwitchingGoals, "captures_to_win", captures_to_win),
            env_field!(SwitchingGoals, "episode_limit", episode_limit),
        ],
        EnvConfig::MatrixGame(_) => vec![
            env_field!(MatrixGame, "n_agents", n_agents),
            env_field!(MatrixGame, "n_actions", n_actions),
            env_field!(MatrixGame, "gamma", gamma),
            EnvField {
                key: "first_stage",
                get: |e| match e {
                    EnvConfig::MatrixGame(c) => join(&c.first_stage),
                    _ => unreachable!("field table matches the variant"),
                },
                set: |e, v| match e {
                    EnvConfig::MatrixGame(c) => {
                        c.first_stage = parse_list(v)?;
                        Ok(())
                    }
                    _ => unreachable!("field table matches the variant"),
                },
            },
            EnvField {
                key: "second_stage",
                get: |e| match e {
                    EnvConfig::MatrixGame(c) => c.second_stage.iter().map(|m| join(m)).collect::<Vec<_>>().join(";"),
                    _ => unreachable!("field table matches the variant"),
                },
                set: |e, v| match e {
                    EnvConfig::MatrixGame(c) => {
                        c.second_stage = if v.trim().is_empty() {
                            Vec::new()
                        } else {
                            v.split(';').map(parse_list).collect::<Result<_, _>>()?
                        };
                        Ok(())
                    }
                    _ => unreachable!("field table matches the variant"),
                },
            },
        ],
        EnvConfig::Chain(_) => vec![
            env_field!(Chain, "length", length),
            env_field!(Chain, "n_agents", n_agents),
            env_field!(Chain, "episode_limit", episode_limit),
        ],
    }
}

/// Default parameters of the named environment.
pub fn default_env(name: &str) -> Result<EnvConfig, ConfigError> {
    match name.trim() {
        "switching_goals" => Ok(EnvConfig::SwitchingGoals(SwitchingGoalsConfig::default())),
        "matrix_game" => Ok(EnvConfig::MatrixGame(MatrixGameConfig::two_step_cooperative())),
        "chain" => Ok(EnvConfig::Chain(ChainConfig::default())),
        other => Err(ConfigError::new(
            "env.name",
            format!("unknown environment {other:?}; expected one of {}", ENV_NAMES.join(", ")),
        )),
    }
}

/// `(key, value)` pairs of a preset.
pub fn preset(name: &str) -> Result<Vec<(&'static str, &'static str)>, ConfigError> {
    Ok(match name {
        "full" => vec![],
        "qmix-ablation" => vec![("train.beta_mi", "0"), ("inference.n_f_step", "0"), ("model.n_window", "1")],
        "iql" => vec![("ablation.disable_mixer", "true")],
        "no-window" => vec![("ablation.disable_window", "true")],
        "no-intrinsic" => vec![("ablation.disable_intrinsic", "true")],
        "no-inference" => vec![("ablation.disable_inference", "true")],
        other => {
            return Err(ConfigError::new(
                "preset",
                format!("unknown preset {other:?}; expected one of {}", PRESETS.join(", ")),
            ))
        }
    })
}

/// Splits config text into `(line, key, value)` triples. `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out: Vec<(usize, String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::new(format!("line {}", n + 1), "expected key = value"))?;
        let key = k.trim().to_string();
        if out.iter().any(|(_, existing, _)| *existing == key) {
            return Err(ConfigError::new(key, format!("duplicate key on line {}", n + 1)));
        }
        out.push((n + 1, key, v.trim().to_string()));
    }
    Ok(out)
}

/// Maps `SMAUG_SECTION__KEY` to `section.key`; other variables are ignored.
pub fn env_overrides<I, K, V>(vars: I) -> Vec<(String, String)>
where
    I: IntoIterator<Item = (K, V)>,
    K: AsRef<str>,
    V: AsRef<str>,
{
    let mut out: Vec<(String, String)> = vars
        .into_iter()
        .filter_map(|(k, v)| {
            let rest = k.as_ref().strip_prefix(ENV_PREFIX)?;
            Some((rest.to_ascii_lowercase().replace("__", "."), v.as_ref().to_string()))
        })
        .collect();
    out.sort();
    out
}

impl ExperimentConfig {
    /// Sets one key. `env.name` replaces the environment with its defaults.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if key == "env.name" {
            self.env = Some(default_env(value)?);
            return Ok(());
        }
        if let Some(name) = key.strip_prefix("env.") {
            let env = self
                .env
                .as_mut()
                .ok_or_else(|| ConfigError::new("env.name", format!("missing; needed to interpret {key}")))?;
            let field = env_fields(env).into_iter().find(|f| f.key == name).ok_or_else(|| {
                let env_name = env.name();
                ConfigError::new(key, format!("unknown key for environment {env_name}"))
            })?;
            return (field.set)(env, value).map_err(|r| ConfigError::new(key, r));
        }
        let field = fields()
            .into_iter()
            .find(|f| f.key == key)
            .ok_or_else(|| ConfigError::new(key, "unknown key"))?;
        (field.set)(self, value).map_err(|r| ConfigError::new(key, r))
    }

    /// Applies pairs, handling `env.name` first so environment parameters
    /// may appear in any order.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<(), ConfigError> {
        if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k.as_ref() == "env.name") {
            self.set("env.name", v.as_ref())?;
        }
        for (k, v) in pairs {
            if k.as_ref() != "env.name" {
                self.set(k.as_ref(), v.as_ref())?;
            }
        }
        Ok(())
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<(), ConfigError> {
        self.apply(&preset(name)?)
    }

    /// Parses config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let pairs: Vec<(String, String)> = parse_pairs(text)?.into_iter().map(|(_, k, v)| (k, v)).collect();
        let mut cfg = Self::default();
        cfg.apply(&pairs)?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    /// Every key with its current value, in a fixed order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        if let Some(env) = &self.env {
            out.push(("env.name".into(), env.name().into()));
            for f in env_fields(env) {
                out.push((format!("env.{}", f.key), (f.get)(env)));
            }
        }
        for f in fields() {
            out.push((f.key.into(), (f.get)(self)));
        }
        out
    }

    /// Config text that parses back to `self`.
    pub fn echo(&self) -> String {
        self.pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Field-level validation of the whole experiment.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let env = self
            .env
            .as_ref()
            .ok_or_else(|| ConfigError::new("env.name", format!("missing; expected one of {}", ENV_NAMES.join(", "))))?;
        env.build()?;
        self.train.validate()?;
        let mut w = self.train.window.clone();
        // environment-derived widths are filled in at build time
        (w.obs_dim, w.n_actions, w.n_agents) = (1, 1, 1);
        w.validate()?;
        let mut m = self.train.mixer.clone();
        (m.n_agents, m.state_dim, m.z_dim) = (1, 1, 1);
        m.validate()?;
        self.train.world.validate()?;
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return Err(ConfigError::new("run.id", "must be a non-empty name without path separators"));
        }
        Ok(())
    }

    pub fn env_config(&self) -> Result<&EnvConfig, ConfigError> {
        self.env.as_ref().ok_or_else(|| ConfigError::new("env.name", "missing"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join(&self.run_id)
    }
}
