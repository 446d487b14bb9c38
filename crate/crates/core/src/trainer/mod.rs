//! End-to-end training: ε-greedy collection in lockstep over several
//! environment instances, whole-episode replay, and three updates per train
//! step (value networks on the TD loss, the variational classifiers, and the
//! inference model).

mod batch;
mod collect;
mod learn;

pub use batch::{EpisodeBatch, EpisodeLayout, ReplayBuffer};
pub use collect::{collect_episodes, collect_episodes_traced, select_action, CollectOptions, Collected, EvalStats, StepTrace};
pub use learn::{Learner, MetricsRow, Networks, TrainMetrics};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::intrinsic::IntrinsicConfig;
use crate::mixer::{MixerConfig, TdConfig};
use crate::window::WindowConfig;
use crate::worldmodel::WorldModelConfig;

/// Linear decay from `start` to `end` over `anneal_steps` environment steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

pub fn epsilon_at(schedule: &EpsilonSchedule, step: u64) -> f64 {
    let (s, e) = (schedule.start, schedule.end);
    if step >= schedule.anneal_steps {
        return e;
    }
    let frac = step as f64 / schedule.anneal_steps as f64;
    (s + (e - s) * frac).clamp(s.min(e), s.max(e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Observation, action and agent counts are taken from the environment.
    pub window: WindowConfig,
    /// Agent count, state and subtask widths are taken from the environment
    /// and the window config.
    pub mixer: MixerConfig,
    pub intrinsic: IntrinsicConfig,
    pub world: WorldModelConfig,
    pub td: TdConfig,
    pub epsilon: EpsilonSchedule,
    pub n_parallel_envs: usize,
    /// Episodes per value update.
    pub batch_size: usize,
    /// Episodes kept for replay.
    pub buffer_capacity: usize,
    /// Joint transitions kept for the inference model.
    pub inference_capacity: usize,
    pub inference_batch: usize,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub grad_clip: f64,
    /// Episodes between target copies.
    pub target_update_interval: usize,
    /// Environment-step budget of one run.
    pub t_max: u64,
    /// Environment steps between greedy evaluations.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seeds: Vec<u64>,
    pub disable_intrinsic: bool,
    pub disable_inference: bool,
    /// Independent Q-learning: per-agent TD targets, no mixer.
    pub disable_mixer: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            window: WindowConfig::new(1, 1, 1),
            mixer: MixerConfig::new(1, 1, 1),
            intrinsic: IntrinsicConfig::default(),
            world: WorldModelConfig::default(),
            td: TdConfig::default(),
            epsilon: EpsilonSchedule::default(),
            n_parallel_envs: 8,
            batch_size: 32,
            buffer_capacity: 5000,
            inference_capacity: 5000,
            inference_batch: 32,
            lr: 5e-4,
            rms_alpha: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            target_update_interval: 200,
            t_max: 100_000,
            eval_interval: 5_000,
            eval_episodes: 32,
            seeds: vec![0, 1, 2, 3, 4],
            disable_intrinsic: false,
            disable_inference: false,
            disable_mixer: false,
        }
    }
}

impl TrainConfig {
    /// Imagined steps per real step after ablations.
    pub fn n_f_step(&self) -> usize {
        if self.disable_inference {
            0
        } else {
            self.world.n_f_step
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.td.validate()?;
        self.intrinsic.validate()?;
        let positive = [
            ("n_parallel_envs", self.n_parallel_envs),
            ("batch_size", self.batch_size),
            ("buffer_capacity", self.buffer_capacity),
            ("inference_capacity", self.inference_capacity),
            ("inference_batch", self.inference_batch),
            ("target_update_interval", self.target_update_interval),
            ("eval_episodes", self.eval_episodes),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(config_err(field, "must be positive"));
            }
        }
        if self.batch_size > self.buffer_capacity {
            return Err(config_err("batch_size", "exceeds buffer_capacity"));
        }
        for (field, v) in [("lr", self.lr), ("rms_eps", self.rms_eps), ("grad_clip", self.grad_clip)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(config_err(field, "must be a positive finite number"));
            }
        }
        if !(self.rms_alpha > 0.0 && self.rms_alpha < 1.0) {
            return Err(config_err("rms_alpha", "must lie in (0, 1)"));
        }
        let e = &self.epsilon;
        if !(0.0..=1.0).contains(&e.start) || !(0.0..=1.0).contains(&e.end) || e.end > e.start {
            return Err(config_err("epsilon", "need 0 <= end <= start <= 1"));
        }
        if self.t_max == 0 || self.eval_interval == 0 {
            return Err(config_err("t_max", "budget and eval interval must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds", "at least one seed is required"));
        }
        Ok(())
    }
}

fn config_err(field: &str, reason: &str) -> Error {
    Error::Config {
        field: format!("train.{field}"),
        reason: reason.into(),
    }
}
