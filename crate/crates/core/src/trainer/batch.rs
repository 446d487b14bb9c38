use alloc::collections::VecDeque;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// Shape of the per-step records of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EpisodeLayout {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
    pub n_actions: usize,
    pub z_dim: usize,
    /// Imagined steps stored per real step.
    pub n_f_step: usize,
}

impl EpisodeLayout {
    /// Network input width: observation then previous-action one-hot.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }
}

/// One recorded episode of `len` transitions.
///
/// Slot-indexed arrays (`observations`, `states`, `available`, `imagined`)
/// have `len + 1` slots; the last holds the state the episode ended in.
/// Transition-indexed arrays (`actions`, `rewards`, ...) have `len` entries.
/// Steps past `len` are padding when episodes are batched together.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeBatch {
    pub layout: EpisodeLayout,
    pub len: usize,
    pub observations: Vec<f32>,
    pub states: Vec<f32>,
    pub available: Vec<bool>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Subtask vectors the acting policy produced.
    pub z: Vec<f32>,
    /// Team intrinsic reward (summed over agents).
    pub r_mi: Vec<f64>,
    /// Discounted predicted reward of the imagined continuation.
    pub r_f: Vec<f64>,
    /// `[slot][step][agent][input_dim]` imagined network inputs.
    pub imagined: Vec<f32>,
    pub success: bool,
}

impl EpisodeBatch {
    pub fn new(layout: EpisodeLayout) -> Self {
        Self {
            layout,
            len: 0,
            observations: Vec::new(),
            states: Vec::new(),
            available: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminated: Vec::new(),
            z: Vec::new(),
            r_mi: Vec::new(),
            r_f: Vec::new(),
            imagined: Vec::new(),
            success: false,
        }
    }

    pub fn slots(&self) -> usize {
        self.states.len() / self.layout.state_dim.max(1)
    }

    /// Records the observation side of a slot.
    pub fn push_slot(&mut self, observations: &[Vec<f32>], state: &[f32], available: &[Vec<bool>], imagined: &[f32]) {
        for o in observations {
            self.observations.extend_from_slice(o);
        }
        self.states.extend_from_slice(state);
        for a in available {
            self.available.extend_from_slice(a);
        }
        self.imagined.extend_from_slice(imagined);
    }

    /// Records the transition taken from the latest slot.
    pub fn push_transition(&mut self, actions: &[usize], z: &[f32], reward: f64, terminated: bool, r_mi: f64, r_f: f64) {
        self.actions.extend_from_slice(actions);
        self.z.extend_from_slice(z);
        self.rewards.push(reward);
        self.terminated.push(terminated);
        self.r_mi.push(r_mi);
        self.r_f.push(r_f);
        self.len += 1;
    }

    pub fn obs(&self, t: usize, agent: usize) -> &[f32] {
        let d = self.layout.obs_dim;
        let i = t * self.layout.n_agents + agent;
        &self.observations[i * d..(i + 1) * d]
    }

    pub fn state(&self, t: usize) -> &[f32] {
        let d = self.layout.state_dim;
        &self.states[t * d..(t + 1) * d]
    }

    pub fn available(&self, t: usize, agent: usize) -> &[bool] {
        let a = self.layout.n_actions;
        let i = t * self.layout.n_agents + agent;
        &self.available[i * a..(i + 1) * a]
    }

    pub fn action(&self, t: usize, agent: usize) -> usize {
        self.actions[t * self.layout.n_agents + agent]
    }

    pub fn z(&self, t: usize, agent: usize) -> &[f32] {
        let d = self.layout.z_dim;
        let i = t * self.layout.n_agents + agent;
        &self.z[i * d..(i + 1) * d]
    }

    pub fn imagined(&self, t: usize, step: usize, agent: usize) -> &[f32] {
        let l = &self.layout;
        let d = l.input_dim();
        let i = (t * l.n_f_step + step) * l.n_agents + agent;
        &self.imagined[i * d..(i + 1) * d]
    }

    /// Network input at slot `t`: observation and one-hot previous action.
    pub fn input(&self, t: usize, agent: usize, out: &mut Vec<f32>) {
        out.extend_from_slice(self.obs(t, agent));
        let start = out.len();
        out.resize(start + self.layout.n_actions, 0.0);
        if t > 0 {
            out[start + self.action(t - 1, agent)] = 1.0;
        }
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Checks array lengths and that every action was available.
    pub fn validate(&self) -> Result<()> {
        let l = &self.layout;
        let (t, s, n) = (self.len, self.len + 1, l.n_agents);
        let sizes = [
            ("observations", self.observations.len(), s * n * l.obs_dim),
            ("states", self.states.len(), s * l.state_dim),
            ("available", self.available.len(), s * n * l.n_actions),
            ("actions", self.actions.len(), t * n),
            ("rewards", self.rewards.len(), t),
            ("terminated", self.terminated.len(), t),
            ("z", self.z.len(), t * n * l.z_dim),
            ("r_mi", self.r_mi.len(), t),
            ("r_f", self.r_f.len(), t),
            ("imagined", self.imagined.len(), s * l.n_f_step * n * l.input_dim()),
        ];
        for (name, got, want) in sizes {
            if got != want {
                return Err(Error::Argument(alloc::format!("episode field {name} has {got} entries, expected {want}")));
            }
        }
        for step in 0..t {
            for i in 0..n {
                let a = self.action(step, i);
                if !self.available(step, i).get(a).copied().unwrap_or(false) {
                    return Err(Error::UnavailableAction { agent: i, action: a });
                }
            }
        }
        if self.terminated.iter().take(t.saturating_sub(1)).any(|&d| d) {
            return Err(Error::Argument("termination flag before the last transition".into()));
        }
        Ok(())
    }

    /// Little-endian serialisation of every field, for byte-level comparison.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let l = &self.layout;
        for v in [l.n_agents, l.obs_dim, l.state_dim, l.n_actions, l.z_dim, l.n_f_step, self.len] {
            out.extend_from_slice(&(v as u64).to_le_bytes());
        }
        for f in [&self.observations, &self.states, &self.z, &self.imagined] {
            f.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        for f in [&self.rewards, &self.r_mi, &self.r_f] {
            f.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
        }
        self.actions.iter().for_each(|&a| out.extend_from_slice(&(a as u64).to_le_bytes()));
        out.extend(self.available.iter().map(|&b| b as u8));
        out.extend(self.terminated.iter().map(|&b| b as u8));
        out.push(self.success as u8);
        out
    }
}

/// FIFO store of whole episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: VecDeque<EpisodeBatch>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            episodes: VecDeque::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, episode: EpisodeBatch) {
        if self.episodes.len() == self.capacity {
            self.episodes.pop_front();
        }
        self.episodes.push_back(episode);
    }

    pub fn get(&self, i: usize) -> Option<&EpisodeBatch> {
        self.episodes.get(i)
    }

    /// `n` distinct episodes chosen uniformly, or `None` while fewer are stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<&EpisodeBatch>> {
        if n == 0 || n > self.episodes.len() {
            return None;
        }
        let idx = rand::seq::index::sample(rng, self.episodes.len(), n);
        Some(idx.iter().map(|i| &self.episodes[i]).collect())
    }
}
