use alloc::boxed::Box;
use alloc::vec::Vec;

use super::{MultiAgentEnv, Reset, StepResult};
use crate::error::{Error, Result};

/// Seed for the `episode`-th episode of an instance whose first seed is `base`.
pub fn episode_seed(base: u64, episode: u64) -> u64 {
    if episode == 0 {
        return base;
    }
    // splitmix64 finaliser over (base, episode)
    let mut z = base
        .wrapping_add(episode.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Outcome of one instance in a vectorised step.
#[derive(Clone, Debug, PartialEq)]
pub struct VecStep {
    pub result: StepResult,
    /// Present when the episode ended and the instance was reset.
    pub reset: Option<Reset>,
}

/// `E` independent instances stepped together, each auto-resetting with its
/// own seed sequence ([`episode_seed`]).
#[derive(Clone, Debug)]
pub struct VecEnv<E> {
    envs: Vec<E>,
    base_seeds: Vec<u64>,
    episodes: Vec<u64>,
}

impl<E: MultiAgentEnv> VecEnv<E> {
    pub fn new(envs: Vec<E>) -> Result<Self> {
        if envs.is_empty() {
            return Err(Error::Argument("vectorised env needs at least one instance".into()));
        }
        let n = envs.len();
        Ok(Self {
            envs,
            base_seeds: alloc::vec![0; n],
            episodes: alloc::vec![0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn envs(&self) -> &[E] {
        &self.envs
    }

    pub fn envs_mut(&mut self) -> &mut [E] {
        &mut self.envs
    }

    pub fn episodes_started(&self, instance: usize) -> u64 {
        self.episodes[instance] + 1
    }

    /// Resets instance `i` with `seeds[i]` (its seed sequence restarts there).
    pub fn reset(&mut self, seeds: &[u64]) -> Result<Vec<Reset>> {
        if seeds.len() != self.envs.len() {
            return Err(Error::Dimension {
                op: "vector reset",
                left: alloc::vec![seeds.len()],
                right: alloc::vec![self.envs.len()],
            });
        }
        self.base_seeds.copy_from_slice(seeds);
        self.episodes.iter_mut().for_each(|e| *e = 0);
        Ok(self
            .envs
            .iter_mut()
            .zip(seeds)
            .map(|(e, &s)| e.reset(s))
            .collect())
    }

    pub fn step(&mut self, actions: &[Vec<usize>]) -> Result<Vec<VecStep>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Dimension {
                op: "vector step",
                left: alloc::vec![actions.len()],
                right: alloc::vec![self.envs.len()],
            });
        }
        let mut out = Vec::with_capacity(self.envs.len());
        for (i, (env, a)) in self.envs.iter_mut().zip(actions).enumerate() {
            let result = env.step(a).map_err(|e| Error::Instance {
                instance: i,
                source: Box::new(e),
            })?;
            let reset = if result.done() {
                self.episodes[i] += 1;
                Some(env.reset(episode_seed(self.base_seeds[i], self.episodes[i])))
            } else {
                None
            };
            out.push(VecStep { result, reset });
        }
        Ok(out)
    }
}
