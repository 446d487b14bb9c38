use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use super::batch::{EpisodeBatch, EpisodeLayout};
use super::learn::Networks;
use crate::env::{MultiAgentEnv, Reset};
use crate::error::{dim_err, Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};
use crate::window::{greedy_action, AgentRecurrentState};
use crate::worldmodel::{rollout, InferenceRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct CollectOptions {
    pub epsilon: f64,
    /// Discount for the imagined-reward sum.
    pub gamma: f64,
    /// Imagine ahead before acting (needs an inference model).
    pub use_rollout: bool,
    /// Compute intrinsic rewards and keep transitions for the model.
    pub training: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Collected {
    pub episodes: Vec<EpisodeBatch>,
    pub transitions: Vec<InferenceRecord>,
    pub env_steps: u64,
}

/// Greedy evaluation summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub mean_return: f64,
    pub success_rate: f64,
    /// Population standard deviation of episode returns.
    pub std_return: f64,
    pub episodes: usize,
}

impl EvalStats {
    pub fn from_episodes(episodes: &[EpisodeBatch]) -> Self {
        let n = episodes.len().max(1) as f64;
        let returns: Vec<f64> = episodes.iter().map(EpisodeBatch::episode_return).collect();
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        Self {
            mean_return: mean,
            success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n,
            std_return: Float::sqrt(var),
            episodes: episodes.len(),
        }
    }
}

/// ε-greedy choice among available actions. Always draws one uniform number
/// first so the random stream does not depend on the Q values.
pub fn select_action<S: Scalar, R: Rng + ?Sized>(q: &[S], available: &[bool], epsilon: f64, rng: &mut R) -> Option<usize> {
    let explore = rng.gen::<f64>() < epsilon;
    if explore {
        let n = available.iter().filter(|&&a| a).count();
        if n == 0 {
            return None;
        }
        let k = rng.gen_range(0..n);
        return available.iter().enumerate().filter(|(_, &a)| a).nth(k).map(|(i, _)| i);
    }
    greedy_action(q, available)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Running,
    /// Episode over; the final slot is recorded on the next pass.
    Closing,
    Done,
}

/// Per-agent view of one executed step, reported to the trace callback.
#[derive(Clone, Debug, PartialEq)]
pub struct StepTrace {
    pub instance: usize,
    pub t: usize,
    pub agent: usize,
    /// Hidden subtask id before the step, when the environment has one.
    pub ground_truth: Option<usize>,
    /// Attention weights over window sizes, averaged across heads.
    pub attention: Vec<f64>,
    pub z: Vec<f64>,
    pub action: usize,
}

/// Runs one episode on every instance in lockstep, instance `b` reset with
/// `seeds[b]`.
pub fn collect_episodes<S: Scalar, E: MultiAgentEnv, R: Rng + ?Sized>(
    nets: &Networks,
    store: &ParamStore<S>,
    envs: &mut [E],
    seeds: &[u64],
    opts: &CollectOptions,
    rng: &mut R,
) -> Result<Collected> {
    collect_episodes_traced(nets, store, envs, seeds, opts, rng, &mut |_| {})
}

/// [`collect_episodes`] that also reports every agent's subtask
/// representation at each executed step.
pub fn collect_episodes_traced<S: Scalar, E: MultiAgentEnv, R: Rng + ?Sized>(
    nets: &Networks,
    store: &ParamStore<S>,
    envs: &mut [E],
    seeds: &[u64],
    opts: &CollectOptions,
    rng: &mut R,
    trace: &mut dyn FnMut(StepTrace),
) -> Result<Collected> {
    if envs.is_empty() || seeds.len() != envs.len() {
        return dim_err("collect instances", &[envs.len()], &[seeds.len()]);
    }
    let spec = envs[0].spec();
    let (ne, n, na) = (envs.len(), spec.n_agents, spec.n_actions);
    let agent = &nets.agent;
    if agent.cfg.n_agents != n || agent.cfg.obs_dim != spec.obs_dim || agent.cfg.n_actions != na {
        return dim_err(
            "network/env shape",
            &[agent.cfg.n_agents, agent.cfg.obs_dim, agent.cfg.n_actions],
            &[n, spec.obs_dim, na],
        );
    }
    let model = nets.model.as_ref().filter(|_| opts.use_rollout);
    let n_f = model.map_or(0, |m| m.cfg.n_f_step);
    let layout = EpisodeLayout {
        n_agents: n,
        obs_dim: spec.obs_dim,
        state_dim: spec.state_dim,
        n_actions: na,
        z_dim: agent.cfg.z_dim(),
        n_f_step: n_f,
    };
    let rows = ne * n;
    let ids: Vec<usize> = (0..rows).map(|r| r % n).collect();
    let input_dim = layout.input_dim();

    let mut current: Vec<Reset> = envs.iter_mut().zip(seeds).map(|(e, &s)| e.reset(s)).collect();
    let mut prev: Vec<Option<usize>> = vec![None; rows];
    let mut phase = vec![Phase::Running; ne];
    let mut episodes: Vec<EpisodeBatch> = (0..ne).map(|_| EpisodeBatch::new(layout)).collect();
    let mut recurrent = AgentRecurrentState::new(&agent.cfg, rows);
    let mut transitions = Vec::new();
    let mut env_steps = 0u64;

    while phase.iter().any(|&p| p != Phase::Done) {
        let mut x = Vec::with_capacity(rows * input_dim);
        let mut obs = Vec::with_capacity(rows * spec.obs_dim);
        let mut avail = Vec::with_capacity(rows);
        for b in 0..ne {
            for i in 0..n {
                if phase[b] == Phase::Done {
                    x.extend(core::iter::repeat_n(S::zero(), input_dim));
                    obs.extend(core::iter::repeat_n(S::zero(), spec.obs_dim));
                    avail.push(vec![true; na]);
                    continue;
                }
                let o = &current[b].observations[i];
                obs.extend(o.iter().map(|&v| S::of(v as f64)));
                x.extend(o.iter().map(|&v| S::of(v as f64)));
                x.extend((0..na).map(|a| if prev[b * n + i] == Some(a) { S::one() } else { S::zero() }));
                avail.push(current[b].available_actions[i].clone());
            }
        }
        agent.observe(store, &mut recurrent, Tensor::new(vec![rows, input_dim], x)?)?;
        let obs = Tensor::new(vec![rows, spec.obs_dim], obs)?;
        let (window, imagined, r_f) = match model {
            Some(m) if n_f > 0 => {
                let r = rollout(m, agent, store, &recurrent, &obs, &avail, &ids, n, n_f, opts.gamma)?;
                (r.window, r.imagined, r.future_reward)
            }
            _ => (recurrent.window.clone(), Vec::new(), vec![0.0; ne]),
        };
        for b in 0..ne {
            if phase[b] == Phase::Done {
                continue;
            }
            let mut im = Vec::with_capacity(n_f * n * input_dim);
            for step in &imagined {
                for i in 0..n {
                    im.extend(step.row(b * n + i).iter().map(|v| v.as_f64() as f32));
                }
            }
            let c = &current[b];
            episodes[b].push_slot(&c.observations, &c.state, &c.available_actions, &im);
            if phase[b] == Phase::Closing {
                phase[b] = Phase::Done;
            }
        }
        if phase.iter().all(|&p| p != Phase::Running) {
            continue;
        }

        let out = agent.evaluate(store, &recurrent.h_traj, &window, &ids)?;
        let mut actions = vec![0usize; rows];
        for b in 0..ne {
            if phase[b] != Phase::Running {
                continue;
            }
            for i in 0..n {
                let r = b * n + i;
                actions[r] = select_action(out.q.row(r), &avail[r], opts.epsilon, rng).ok_or_else(|| Error::Instance {
                    instance: b,
                    source: alloc::boxed::Box::new(Error::Argument(alloc::format!("agent {i} has no available action"))),
                })?;
            }
        }
        let r_mi = match (&nets.variational, opts.training) {
            (Some(var), true) => {
                let per_row = var.intrinsic_reward(store, &obs, &out.representation.z, &ids, &actions)?;
                (0..ne).map(|b| per_row[b * n..(b + 1) * n].iter().sum()).collect()
            }
            _ => vec![0.0; ne],
        };
        let z = &out.representation.z;
        for b in 0..ne {
            if phase[b] != Phase::Running {
                continue;
            }
            let acts = &actions[b * n..(b + 1) * n];
            let truth = envs[b].ground_truth_subtask();
            for (i, &action) in acts.iter().enumerate() {
                let r = b * n + i;
                trace(StepTrace {
                    instance: b,
                    t: episodes[b].len,
                    agent: i,
                    ground_truth: truth,
                    attention: out.representation.mean_weights(r),
                    z: z.row(r).iter().map(|v| v.as_f64()).collect(),
                    action,
                });
            }
            let res = envs[b].step(acts).map_err(|e| Error::Instance {
                instance: b,
                source: alloc::boxed::Box::new(e),
            })?;
            env_steps += 1;
            let zb: Vec<f32> = (0..n)
                .flat_map(|i| z.row(b * n + i).iter().map(|v| v.as_f64() as f32))
                .collect();
            episodes[b].push_transition(acts, &zb, res.reward, res.terminated, r_mi[b], r_f[b]);
            if opts.training {
                transitions.push(InferenceRecord {
                    observations: current[b].observations.clone(),
                    actions: acts.to_vec(),
                    next_observations: res.observations.clone(),
                    reward: res.reward,
                });
            }
            for i in 0..n {
                prev[b * n + i] = Some(acts[i]);
            }
            if res.done() {
                phase[b] = Phase::Closing;
                episodes[b].success = res.success;
            }
            current[b] = Reset {
                observations: res.observations,
                state: res.state,
                available_actions: res.available_actions,
            };
        }
    }
    Ok(Collected {
        episodes,
        transitions,
        env_steps,
    })
}
