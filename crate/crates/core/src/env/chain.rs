use alloc::vec;
use alloc::vec::Vec;

use super::{check_actions, one_hot, DecPomdpSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ChainConfig {
    pub length: usize,
    pub n_agents: usize,
    pub episode_limit: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            length: 5,
            n_agents: 1,
            episode_limit: 10,
        }
    }
}

/// Deterministic 1-D chain. Each agent moves left (action 0) or right
/// (action 1) along its own copy of the chain; moves past an end are clamped.
/// The team reward is the fraction of agents sitting on the right end.
#[derive(Clone, Debug)]
pub struct ChainEnv {
    cfg: ChainConfig,
    positions: Vec<usize>,
    t: usize,
    done: bool,
}

impl ChainEnv {
    pub fn new(cfg: ChainConfig) -> Result<Self> {
        if cfg.length < 2 || cfg.n_agents < 1 || cfg.episode_limit < 1 {
            return Err(Error::Config {
                field: "env.length".into(),
                reason: "need length >= 2, n_agents >= 1, episode_limit >= 1".into(),
            });
        }
        Ok(Self {
            positions: vec![0; cfg.n_agents],
            cfg,
            t: 0,
            done: true,
        })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    /// Next position of one agent.
    pub fn transition(&self, pos: usize, action: usize) -> usize {
        match action {
            0 => pos.saturating_sub(1),
            _ => (pos + 1).min(self.cfg.length - 1),
        }
    }

    pub fn observe(&self, pos: usize) -> Vec<f32> {
        one_hot(self.cfg.length, pos).collect()
    }

    fn observations(&self) -> Vec<Vec<f32>> {
        self.positions.iter().map(|&p| self.observe(p)).collect()
    }

    fn state(&self) -> Vec<f32> {
        self.observations().concat()
    }
}

impl MultiAgentEnv for ChainEnv {
    fn spec(&self) -> DecPomdpSpec {
        DecPomdpSpec {
            n_agents: self.cfg.n_agents,
            state_dim: self.cfg.length * self.cfg.n_agents,
            obs_dim: self.cfg.length,
            n_actions: 2,
            episode_limit: self.cfg.episode_limit,
            gamma: 0.99,
        }
    }

    fn reset(&mut self, seed: u64) -> Reset {
        let l = self.cfg.length as u64;
        self.positions = (0..self.cfg.n_agents as u64)
            .map(|i| (seed.wrapping_add(i) % l) as usize)
            .collect();
        self.t = 0;
        self.done = false;
        Reset {
            observations: self.observations(),
            state: self.state(),
            available_actions: vec![vec![true; 2]; self.cfg.n_agents],
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        check_actions(actions, &vec![vec![true; 2]; self.cfg.n_agents])?;
        let next: Vec<usize> = self
            .positions
            .iter()
            .zip(actions)
            .map(|(&p, &a)| self.transition(p, a))
            .collect();
        self.positions = next;
        self.t += 1;
        let at_end = self
            .positions
            .iter()
            .filter(|&&p| p == self.cfg.length - 1)
            .count();
        let reward = at_end as f64 / self.cfg.n_agents as f64;
        let truncated = self.t >= self.cfg.episode_limit;
        self.done = truncated;
        Ok(StepResult {
            observations: self.observations(),
            state: self.state(),
            reward,
            terminated: false,
            truncated,
            available_actions: vec![vec![true; 2]; self.cfg.n_agents],
            success: at_end == self.cfg.n_agents,
        })
    }

    fn reward_bound(&self) -> f64 {
        1.0
    }
}
