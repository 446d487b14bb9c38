//! Decentralised partially observable environments.
//!
//! Every environment exposes per-agent observations, a global state, a single
//! team reward per step, and per-agent availability masks. Actions are checked
//! against the masks; an unavailable action is a contract violation.

mod chain;
mod matrix;
mod switching;
mod vector;

pub use chain::{ChainConfig, ChainEnv};
pub use matrix::{matrix_game_oracle, MatrixGame, MatrixGameConfig};
pub use switching::{SwitchingGoals, SwitchingGoalsConfig, DOWN, LEFT, RIGHT, STAY, UP};
pub use vector::{episode_seed, VecEnv, VecStep};

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Static description of a Dec-POMDP instance.
#[derive(Clone, Debug, PartialEq)]
pub struct DecPomdpSpec {
    pub n_agents: usize,
    pub state_dim: usize,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub episode_limit: usize,
    pub gamma: f64,
}

impl DecPomdpSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Config {
            field: field.into(),
            reason: reason.into(),
        };
        if self.n_agents < 1 {
            return Err(bad("n_agents", "must be at least 1"));
        }
        if self.n_actions < 2 {
            return Err(bad("n_actions", "must be at least 2"));
        }
        if self.episode_limit < 1 {
            return Err(bad("episode_limit", "must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad("gamma", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Observations, state and masks at the start of an episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Reset {
    pub observations: Vec<Vec<f32>>,
    pub state: Vec<f32>,
    pub available_actions: Vec<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observations: Vec<Vec<f32>>,
    pub state: Vec<f32>,
    /// Team reward for the transition.
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub available_actions: Vec<Vec<bool>>,
    /// Task-specific success flag, meaningful once the episode has ended.
    pub success: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

pub trait MultiAgentEnv {
    fn spec(&self) -> DecPomdpSpec;

    /// Starts a new episode; the same seed always yields the same layout.
    fn reset(&mut self, seed: u64) -> Reset;

    fn step(&mut self, actions: &[usize]) -> Result<StepResult>;

    /// Upper bound on `|reward|` for any single step.
    fn reward_bound(&self) -> f64;

    /// Hidden ground-truth subtask id, when the environment has one.
    fn ground_truth_subtask(&self) -> Option<usize> {
        None
    }
}

/// Environment selected at run time.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    SwitchingGoals(SwitchingGoals),
    MatrixGame(MatrixGame),
    Chain(ChainEnv),
}

/// Construction parameters for [`AnyEnv`].
#[derive(Clone, Debug, PartialEq)]
pub enum EnvConfig {
    SwitchingGoals(SwitchingGoalsConfig),
    MatrixGame(MatrixGameConfig),
    Chain(ChainConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::SwitchingGoals(_) => "switching_goals",
            EnvConfig::MatrixGame(_) => "matrix_game",
            EnvConfig::Chain(_) => "chain",
        }
    }

    pub fn build(&self) -> Result<AnyEnv> {
        Ok(match self {
            EnvConfig::SwitchingGoals(c) => AnyEnv::SwitchingGoals(SwitchingGoals::new(c.clone())?),
            EnvConfig::MatrixGame(c) => AnyEnv::MatrixGame(MatrixGame::new(c.clone())?),
            EnvConfig::Chain(c) => AnyEnv::Chain(ChainEnv::new(c.clone())?),
        })
    }
}

impl MultiAgentEnv for AnyEnv {
    fn spec(&self) -> DecPomdpSpec {
        match self {
            AnyEnv::SwitchingGoals(e) => e.spec(),
            AnyEnv::MatrixGame(e) => e.spec(),
            AnyEnv::Chain(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Reset {
        match self {
            AnyEnv::SwitchingGoals(e) => e.reset(seed),
            AnyEnv::MatrixGame(e) => e.reset(seed),
            AnyEnv::Chain(e) => e.reset(seed),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        match self {
            AnyEnv::SwitchingGoals(e) => e.step(actions),
            AnyEnv::MatrixGame(e) => e.step(actions),
            AnyEnv::Chain(e) => e.step(actions),
        }
    }

    fn reward_bound(&self) -> f64 {
        match self {
            AnyEnv::SwitchingGoals(e) => e.reward_bound(),
            AnyEnv::MatrixGame(e) => e.reward_bound(),
            AnyEnv::Chain(e) => e.reward_bound(),
        }
    }

    fn ground_truth_subtask(&self) -> Option<usize> {
        match self {
            AnyEnv::SwitchingGoals(e) => e.ground_truth_subtask(),
            AnyEnv::MatrixGame(e) => e.ground_truth_subtask(),
            AnyEnv::Chain(e) => e.ground_truth_subtask(),
        }
    }
}

/// Checks a joint action against arity, range and availability.
pub(crate) fn check_actions(actions: &[usize], avail: &[Vec<bool>]) -> Result<()> {
    if actions.len() != avail.len() {
        return Err(Error::Dimension {
            op: "joint action",
            left: alloc::vec![actions.len()],
            right: alloc::vec![avail.len()],
        });
    }
    for (agent, (&a, mask)) in actions.iter().zip(avail).enumerate() {
        if !mask.get(a).copied().unwrap_or(false) {
            return Err(Error::UnavailableAction { agent, action: a });
        }
    }
    Ok(())
}

pub(crate) fn one_hot(n: usize, i: usize) -> impl Iterator<Item = f32> {
    (0..n).map(move |j| if j == i { 1.0 } else { 0.0 })
}
