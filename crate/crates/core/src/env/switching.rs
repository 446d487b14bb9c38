use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_actions, one_hot, DecPomdpSpec, MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};

/// Action indices shared by grid environments.
pub const STAY: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;
pub const RIGHT: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingGoalsConfig {
    pub grid_size: usize,
    pub n_agents: usize,
    pub n_goal_sites: usize,
    /// Inclusive range the active-goal lifetime is drawn from on each activation.
    pub switch_interval: (usize, usize),
    /// Paid when every agent stands on the active site.
    pub capture_reward: f64,
    /// Paid per agent per step (normally negative).
    pub step_penalty: f64,
    /// Paid per agent standing on the active site.
    pub occupancy_reward: f64,
    /// Chebyshev radius within which goal sites are visible.
    pub view_radius: usize,
    /// Captures that end the episode successfully.
    pub captures_to_win: usize,
    pub episode_limit: usize,
}

impl Default for SwitchingGoalsConfig {
    fn default() -> Self {
        Self {
            grid_size: 7,
            n_agents: 3,
            n_goal_sites: 4,
            switch_interval: (5, 15),
            capture_reward: 1.0,
            step_penalty: -0.01,
            occupancy_reward: 0.02,
            view_radius: 3,
            captures_to_win: 3,
            episode_limit: 60,
        }
    }
}

/// Gridworld where one of several goal sites is active at a time and the active
/// site switches after a random interval or once all agents gather on it.
///
/// Agents see their own position, the relative positions of teammates, and
/// goal sites (with an active flag) only within `view_radius`; which site is
/// active must be inferred from behaviour over time.
#[derive(Clone, Debug)]
pub struct SwitchingGoals {
    cfg: SwitchingGoalsConfig,
    rng: ChaCha8Rng,
    agents: Vec<(usize, usize)>,
    sites: Vec<(usize, usize)>,
    active: usize,
    timer: usize,
    captures: usize,
    t: usize,
    done: bool,
}

impl SwitchingGoals {
    pub fn new(cfg: SwitchingGoalsConfig) -> Result<Self> {
        let bad = |field: &str, reason: &str| Error::Config {
            field: alloc::format!("env.{field}"),
            reason: reason.into(),
        };
        if cfg.n_goal_sites < 2 {
            return Err(bad("n_goal_sites", "must be at least 2"));
        }
        if cfg.switch_interval.0 < 1 || cfg.switch_interval.1 < cfg.switch_interval.0 {
            return Err(bad("switch_interval", "need 1 <= min <= max"));
        }
        if cfg.grid_size < 2 || cfg.n_goal_sites >= cfg.grid_size * cfg.grid_size {
            return Err(bad("grid_size", "grid too small for the goal sites"));
        }
        if cfg.n_agents < 1 {
            return Err(bad("n_agents", "must be at least 1"));
        }
        if cfg.episode_limit < 1 || cfg.captures_to_win < 1 {
            return Err(bad("episode_limit", "must be at least 1"));
        }
        let mut env = Self {
            rng: ChaCha8Rng::seed_from_u64(0),
            agents: Vec::new(),
            sites: Vec::new(),
            active: 0,
            timer: 0,
            captures: 0,
            t: 0,
            done: true,
            cfg,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn config(&self) -> &SwitchingGoalsConfig {
        &self.cfg
    }

    pub fn agent_positions(&self) -> &[(usize, usize)] {
        &self.agents
    }

    pub fn goal_sites(&self) -> &[(usize, usize)] {
        &self.sites
    }

    pub fn active_goal(&self) -> usize {
        self.active
    }

    pub fn captures(&self) -> usize {
        self.captures
    }

    pub fn timer(&self) -> usize {
        self.timer
    }

    /// Overrides the layout; intended for scripted scenarios.
    pub fn set_layout(&mut self, agents: Vec<(usize, usize)>, sites: Vec<(usize, usize)>, active: usize) {
        assert_eq!(agents.len(), self.cfg.n_agents);
        assert_eq!(sites.len(), self.cfg.n_goal_sites);
        self.agents = agents;
        self.sites = sites;
        self.active = active;
    }

    fn obs_dim(&self) -> usize {
        2 * self.cfg.grid_size + 2 * (self.cfg.n_agents - 1) + 4 * self.cfg.n_goal_sites
    }

    fn state_dim(&self) -> usize {
        2 * self.cfg.n_agents + 3 * self.cfg.n_goal_sites + 2
    }

    fn sample_interval(&mut self) -> usize {
        let (lo, hi) = self.cfg.switch_interval;
        self.rng.gen_range(lo..=hi)
    }

    fn activate_other(&mut self) {
        let k = self.rng.gen_range(0..self.cfg.n_goal_sites - 1);
        self.active = if k >= self.active { k + 1 } else { k };
        self.timer = self.sample_interval();
    }

    fn available(&self) -> Vec<Vec<bool>> {
        let g = self.cfg.grid_size;
        self.agents
            .iter()
            .map(|&(r, c)| vec![true, r > 0, r + 1 < g, c > 0, c + 1 < g])
            .collect()
    }

    fn observations(&self) -> Vec<Vec<f32>> {
        let g = self.cfg.grid_size;
        let scale = (g - 1) as f32;
        let radius = self.cfg.view_radius as isize;
        (0..self.cfg.n_agents)
            .map(|i| {
                let (r, c) = self.agents[i];
                let mut o = Vec::with_capacity(self.obs_dim());
                o.extend(one_hot(g, r));
                o.extend(one_hot(g, c));
                for (j, &(rj, cj)) in self.agents.iter().enumerate() {
                    if j != i {
                        o.push((rj as f32 - r as f32) / scale);
                        o.push((cj as f32 - c as f32) / scale);
                    }
                }
                for (k, &(sr, sc)) in self.sites.iter().enumerate() {
                    let (dr, dc) = (sr as isize - r as isize, sc as isize - c as isize);
                    if dr.abs() <= radius && dc.abs() <= radius {
                        o.push(1.0);
                        o.push(if k == self.active { 1.0 } else { 0.0 });
                        o.push(dr as f32 / scale);
                        o.push(dc as f32 / scale);
                    } else {
                        o.extend([0.0; 4]);
                    }
                }
                o
            })
            .collect()
    }

    fn state(&self) -> Vec<f32> {
        let scale = (self.cfg.grid_size - 1) as f32;
        let mut s = Vec::with_capacity(self.state_dim());
        for &(r, c) in &self.agents {
            s.push(r as f32 / scale);
            s.push(c as f32 / scale);
        }
        for &(r, c) in &self.sites {
            s.push(r as f32 / scale);
            s.push(c as f32 / scale);
        }
        s.extend(one_hot(self.cfg.n_goal_sites, self.active));
        s.push(self.timer as f32 / self.cfg.switch_interval.1 as f32);
        s.push(self.t as f32 / self.cfg.episode_limit as f32);
        s
    }
}

impl MultiAgentEnv for SwitchingGoals {
    fn spec(&self) -> DecPomdpSpec {
        DecPomdpSpec {
            n_agents: self.cfg.n_agents,
            state_dim: self.state_dim(),
            obs_dim: self.obs_dim(),
            n_actions: 5,
            episode_limit: self.cfg.episode_limit,
            gamma: 0.99,
        }
    }

    fn reset(&mut self, seed: u64) -> Reset {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let g = self.cfg.grid_size;
        let mut cells: Vec<(usize, usize)> = (0..g * g).map(|i| (i / g, i % g)).collect();
        cells.shuffle(&mut self.rng);
        self.sites = cells[..self.cfg.n_goal_sites].to_vec();
        let free = &cells[self.cfg.n_goal_sites..];
        self.agents = (0..self.cfg.n_agents)
            .map(|_| free[self.rng.gen_range(0..free.len())])
            .collect();
        self.active = self.rng.gen_range(0..self.cfg.n_goal_sites);
        self.timer = self.sample_interval();
        self.captures = 0;
        self.t = 0;
        self.done = false;
        Reset {
            observations: self.observations(),
            state: self.state(),
            available_actions: self.available(),
        }
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult> {
        if self.done {
            return Err(Error::EpisodeOver);
        }
        check_actions(actions, &self.available())?;
        for (pos, &a) in self.agents.iter_mut().zip(actions) {
            match a {
                UP => pos.0 -= 1,
                DOWN => pos.0 += 1,
                LEFT => pos.1 -= 1,
                RIGHT => pos.1 += 1,
                _ => {}
            }
        }
        self.t += 1;
        let n = self.cfg.n_agents;
        let goal = self.sites[self.active];
        let on_goal = self.agents.iter().filter(|&&p| p == goal).count();
        let mut reward = n as f64 * self.cfg.step_penalty + on_goal as f64 * self.cfg.occupancy_reward;
        if on_goal == n {
            reward += self.cfg.capture_reward;
            self.captures += 1;
            self.activate_other();
        } else {
            self.timer -= 1;
            if self.timer == 0 {
                self.activate_other();
            }
        }
        let terminated = self.captures >= self.cfg.captures_to_win;
        let truncated = !terminated && self.t >= self.cfg.episode_limit;
        self.done = terminated || truncated;
        Ok(StepResult {
            observations: self.observations(),
            state: self.state(),
            reward,
            terminated,
            truncated,
            available_actions: self.available(),
            success: terminated,
        })
    }

    fn reward_bound(&self) -> f64 {
        let n = self.cfg.n_agents as f64;
        n * self.cfg.step_penalty.abs() + n * self.cfg.occupancy_reward.abs() + self.cfg.capture_reward.abs()
    }

    fn ground_truth_subtask(&self) -> Option<usize> {
        Some(self.active)
    }
}
