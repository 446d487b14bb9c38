use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{check_actions, one_hot, DecPomdpSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};

/// Tabular cooperative game of one or two stages.
///
/// Payoff tables are indexed by the joint action in mixed radix with agent 0
/// most significant. In two-stage games the second-stage table is chosen by
/// agent 0's first action modulo the number of second-stage tables.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGameConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub first_stage: Vec<f64>,
    /// Empty for a single-stage game.
    pub second_stage: Vec<Vec<f64>>,
    pub gamma: f64,
}

impl MatrixGameConfig {
    /// Two agents, two actions: agent 0 picks the second-stage matrix; one
    /// matrix pays 7 everywhere, the other pays 8 only under coordination.
    pub fn two_step_cooperative() -> Self {
        Self {
            n_agents: 2,
            n_actions: 2,
            first_stage: vec![0.0; 4],
            second_stage: vec![vec![7.0; 4], vec![0.0, 1.0, 1.0, 8.0]],
            gamma: 1.0,
        }
    }

    pub fn n_stages(&self) -> usize {
        if self.second_stage.is_empty() {
            1
        } else {
            2
        }
    }

    fn joint_count(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| Error::Config {
            field: alloc::format!("env.{field}"),
            reason: reason.into(),
        };
        if self.n_agents < 1 || self.n_actions < 2 {
            return Err(bad("n_agents", "need n_agents >= 1 and n_actions >= 2"));
        }
        let n = self.joint_count();
        if self.first_stage.len() != n || self.second_stage.iter().any(|t| t.len() != n) {
            return Err(bad("payoffs", "tables must have n_actions^n_agents entries"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(bad("gamma", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Largest number of joint-action sequences the oracle will enumerate.
pub const ORACLE_ENUMERATION_CAP: u128 = 1 << 24;

/// Exact optimal discounted return by enumerating every joint-action sequence.
pub fn matrix_game_oracle(cfg: &MatrixGameConfig) -> Result<f64> {
    cfg.validate()?;
    let per_stage = cfg.joint_count() as u128;
    let count = per_stage.pow(cfg.n_stages() as u32);
    if cfg.n_agents > 3 || cfg.n_actions > 5 || count > ORACLE_ENUMERATION_CAP {
        return Err(Error::EnumerationCap {
            count,
            cap: ORACLE_ENUMERATION_CAP,
        });
    }
    let n = cfg.joint_count();
    let mut best = f64::NEG_INFINITY;
    for first in 0..n {
        if cfg.second_stage.is_empty() {
            best = best.max(cfg.first_stage[first]);
            continue;
        }
        let leader = first / cfg.n_actions.pow(cfg.n_agents as u32 - 1);
        let table = &cfg.second_stage[leader % cfg.second_stage.len()];
        for second in 0..n {
            best = best.max(cfg.first_stage[first] + cfg.gamma * table[second]);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub struct MatrixGame {
    cfg: MatrixGameConfig,
    optimum: f64,
    stage: usize,
    branch: usize,
    ret: f64,
    done: bool,
}

impl MatrixGame {
    pub fn new(cfg: MatrixGameConfig) -> Result<Self> {
        let optimum = matrix_game_oracle(&cfg)?;
        Ok(Self {
            cfg,
            optimum,
            stage: 0,
            branch: 0,
            ret: 0.0,
            done: true,
        })
    }

    pub fn config(&self) -> &MatrixGameConfig {
        &self.cfg
    }

    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// Observation index: 0 for the first stage, `1 + branch` afterwards.
    fn position(&self) -> usize {
        if self.stage == 0 {
            0
        } else {
            1 + self.branch
        }
    }

    fn obs_dim(&self) -> usize {
        1 + self.cfg.second_stage.len()
    }

    fn observation(&self) -> Vec<f32> {
        one_hot(self.obs_dim(), self.position()).collect()
    }

    fn all_available(&self) -> Vec<Vec<bool>> {
        vec![vec![true; self.cfg.n_actions]; self.cfg.n_agents]
    }
}

impl MultiAgentEnv for MatrixGame {
    fn spec(&self) -> DecPomdpSpec {
        DecPomdpSpec {
            n_agents: self.cfg.n_agents,
            state_dim: self.obs_dim(),
            obs_dim: self.obs_dim(),
            n_actions: self.cfg.n_actions,
            episode_limit: self.cfg.n_stages(),
            gamma: self.cfg.gamma,
        }
    }

    fn reset(&mut self, _seed: u64) -> Reset {
        self.stage = 0;
        self.branch = 0;
        self.ret = 0.0;
        self.done = false;
        let o = self.observation();
        Reset {
            observations: vec![o.clone(); self.cfg.n_agents],
            state: o,
            available_actions: self.all_available(),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        check_actions(actions, &self.all_available())?;
        let joint = self.cfg.joint_index(actions);
        let reward = if self.stage == 0 {
            self.cfg.first_stage[joint]
        } else {
            self.cfg.second_stage[self.branch][joint]
        };
        self.ret += reward * Float::powi(self.cfg.gamma, self.stage as i32);
        if self.stage == 0 && !self.cfg.second_stage.is_empty() {
            self.branch = actions[0] % self.cfg.second_stage.len();
        }
        self.stage += 1;
        let terminated = self.stage >= self.cfg.n_stages();
        self.done = terminated;
        let o = self.observation();
        Ok(StepResult {
            observations: vec![o.clone(); self.cfg.n_agents],
            state: o,
            reward,
            terminated,
            truncated: false,
            available_actions: self.all_available(),
            success: terminated && self.ret >= self.optimum - 1e-9,
        })
    }

    fn reward_bound(&self) -> f64 {
        self.cfg
            .first_stage
            .iter()
            .chain(self.cfg.second_stage.iter().flatten())
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }
}
