//! Learned one-step model of observations and team reward, and the short
//! imagined rollout that extends each agent's trajectory window.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{DenseLayer, Graph, ParamId, ParamStore, Scalar, Tensor, Var};
use crate::window::{greedy_action, AgentNetwork, AgentRecurrentState, WindowInput};

#[derive(Clone, Debug, PartialEq)]
pub struct WorldModelConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Imagined steps per real step; 0 disables the rollout.
    pub n_f_step: usize,
    pub beta_o: f64,
    pub beta_r: f64,
    /// Whether greedy execution (evaluation) also runs the rollout.
    pub use_at_execution: bool,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            hidden_dim: 64,
            n_f_step: 3,
            beta_o: 1.0,
            beta_r: 1.0,
            use_at_execution: true,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("embed_dim", self.embed_dim), ("hidden_dim", self.hidden_dim)] {
            if v == 0 {
                return Err(Error::Config {
                    field: alloc::format!("inference.{field}"),
                    reason: "must be positive".into(),
                });
            }
        }
        for (field, v) in [("beta_o", self.beta_o), ("beta_r", self.beta_r)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: alloc::format!("inference.{field}"),
                    reason: "must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }
}

/// Shared encoder of `(o, onehot(a))` with separate observation and reward decoders.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceNet {
    pub cfg: WorldModelConfig,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub encoder: DenseLayer,
    pub obs_hidden: DenseLayer,
    pub obs_out: DenseLayer,
    pub reward_hidden: DenseLayer,
    pub reward_out: DenseLayer,
}

impl InferenceNet {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        cfg: WorldModelConfig,
        obs_dim: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let (e, h) = (cfg.embed_dim, cfg.hidden_dim);
        Ok(Self {
            encoder: DenseLayer::new(store, "model.encoder", obs_dim + n_actions, e, rng),
            obs_hidden: DenseLayer::new(store, "model.obs.hidden", e, h, rng),
            obs_out: DenseLayer::new(store, "model.obs.out", h, obs_dim, rng),
            reward_hidden: DenseLayer::new(store, "model.reward.hidden", e, h, rng),
            reward_out: DenseLayer::new(store, "model.reward.out", h, 1, rng),
            cfg,
            obs_dim,
            n_actions,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.encoder,
            &self.obs_hidden,
            &self.obs_out,
            &self.reward_hidden,
            &self.reward_out,
        ]
        .iter()
        .flat_map(|l| l.params())
        .collect()
    }

    /// `(predicted next observation [R, obs_dim], predicted reward [R, 1])`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, obs: Var, actions: &[usize]) -> Result<(Var, Var)> {
        let rows = g.value(obs).rows();
        if actions.len() != rows || actions.iter().any(|&a| a >= self.n_actions) {
            return dim_err("model actions", &[actions.len()], &[rows, self.n_actions]);
        }
        let mut onehot = vec![S::zero(); rows * self.n_actions];
        for (r, &a) in actions.iter().enumerate() {
            onehot[r * self.n_actions + a] = S::one();
        }
        let a = g.constant(Tensor::new(vec![rows, self.n_actions], onehot)?);
        let x = g.concat(&[obs, a])?;
        let e = self.encoder.forward(g, x)?;
        let e = g.relu(e);
        let ho = self.obs_hidden.forward(g, e)?;
        let ho = g.relu(ho);
        let o = self.obs_out.forward(g, ho)?;
        let hr = self.reward_hidden.forward(g, e)?;
        let hr = g.relu(hr);
        let r = self.reward_out.forward(g, hr)?;
        Ok((o, r))
    }

    pub fn predict_step<S: Scalar>(&self, store: &ParamStore<S>, obs: &Tensor<S>, actions: &[usize]) -> Result<(Tensor<S>, Vec<f64>)> {
        let mut g = Graph::new(store);
        let o = g.constant(obs.clone());
        let (po, pr) = self.forward(&mut g, o, actions)?;
        Ok((g.value(po).clone(), g.value(pr).to_f64_vec()))
    }

    /// Mean over transitions of `Σ_agents β_o·‖f_o − o'‖ + β_r·|f_r − r|`.
    pub fn inference_loss<S: Scalar>(&self, g: &mut Graph<'_, S>, batch: &[InferenceRecord]) -> Result<Var> {
        let first = batch.first().ok_or_else(|| Error::Argument("empty inference batch".into()))?;
        let n = first.actions.len();
        let rows = batch.len() * n;
        let mut obs = Vec::with_capacity(rows * self.obs_dim);
        let mut next = Vec::with_capacity(rows * self.obs_dim);
        let mut rewards = Vec::with_capacity(rows);
        let mut actions = Vec::with_capacity(rows);
        for rec in batch {
            if rec.actions.len() != n || rec.observations.len() != n || rec.next_observations.len() != n {
                return dim_err("inference record agents", &[rec.actions.len()], &[n]);
            }
            for i in 0..n {
                obs.extend_from_slice(&rec.observations[i]);
                next.extend_from_slice(&rec.next_observations[i]);
                rewards.push(rec.reward as f32);
                actions.push(rec.actions[i]);
            }
        }
        let o = g.constant(Tensor::from_f32(&[rows, self.obs_dim], &obs)?);
        let target_o = g.constant(Tensor::from_f32(&[rows, self.obs_dim], &next)?);
        let target_r = g.constant(Tensor::from_f32(&[rows, 1], &rewards)?);
        let (po, pr) = self.forward(g, o, &actions)?;
        let eo = g.sub(po, target_o)?;
        let eo = g.row_norm(eo);
        let er = g.sub(pr, target_r)?;
        let er = g.abs(er);
        let eo = g.sum(eo);
        let er = g.sum(er);
        let eo = g.scale(eo, self.cfg.beta_o);
        let er = g.scale(er, self.cfg.beta_r);
        let total = g.add(eo, er)?;
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }
}

/// One real joint transition kept for model training.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRecord {
    pub observations: Vec<Vec<f32>>,
    pub actions: Vec<usize>,
    pub next_observations: Vec<Vec<f32>>,
    pub reward: f64,
}

/// FIFO store of transitions with uniform sampling.
#[derive(Clone, Debug)]
pub struct InferenceBuffer {
    capacity: usize,
    records: VecDeque<InferenceRecord>,
}

impl InferenceBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            records: VecDeque::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn push(&mut self, rec: InferenceRecord) {
        if self.records.len() == self.capacity {
            self.records.pop_front();
        }
        self.records.push_back(rec);
    }

    /// `n` records drawn uniformly with replacement; empty if the buffer is.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<InferenceRecord> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..n)
            .map(|_| self.records[rng.gen_range(0..self.records.len())].clone())
            .collect()
    }
}

/// `Σ_m γ^m r_m`.
pub fn future_reward(rewards: &[f64], gamma: f64) -> f64 {
    let mut disc = 1.0;
    let mut total = 0.0;
    for &r in rewards {
        total += disc * r;
        disc *= gamma;
    }
    total
}

/// Imagined continuation of every row's trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutResult<S> {
    /// Trailing window over the real history followed by the imagined steps.
    pub window: WindowInput<S>,
    /// Imagined network inputs, one `[rows, input_dim]` tensor per step.
    pub imagined: Vec<Tensor<S>>,
    /// `[step][group]` predicted team rewards.
    pub predicted_rewards: Vec<Vec<f64>>,
    /// Discounted sum of the predicted rewards per group.
    pub future_reward: Vec<f64>,
}

/// Rolls the model forward `n_f_step` steps, acting greedily on cloned
/// recurrent states. Rows come in consecutive groups of `group` agents that
/// share a team reward. `state` must already include the current real step.
#[allow(clippy::too_many_arguments)]
pub fn rollout<S: Scalar>(
    model: &InferenceNet,
    policy: &AgentNetwork,
    store: &ParamStore<S>,
    state: &AgentRecurrentState<S>,
    obs: &Tensor<S>,
    available: &[Vec<bool>],
    agent_ids: &[usize],
    group: usize,
    n_f_step: usize,
    gamma: f64,
) -> Result<RolloutResult<S>> {
    let rows = obs.rows();
    if group == 0 || !rows.is_multiple_of(group) || available.len() != rows {
        return dim_err("rollout rows", &[rows, available.len()], &[group]);
    }
    let groups = rows / group;
    let mut st = state.clone();
    let mut current = obs.clone();
    let mut imagined = Vec::with_capacity(n_f_step);
    let mut predicted_rewards: Vec<Vec<f64>> = Vec::with_capacity(n_f_step);
    for _ in 0..n_f_step {
        let out = policy.evaluate(store, &st.h_traj, &st.window, agent_ids)?;
        let actions = (0..rows)
            .map(|r| {
                greedy_action(out.q.row(r), &available[r])
                    .ok_or_else(|| Error::Argument(alloc::format!("row {r} has no available action")))
            })
            .collect::<Result<Vec<usize>>>()?;
        let (next, rewards) = model.predict_step(store, &current, &actions)?;
        predicted_rewards.push(
            (0..groups)
                .map(|gi| rewards[gi * group..(gi + 1) * group].iter().sum::<f64>() / group as f64)
                .collect(),
        );
        let x = imagined_input(&next, &actions, model.n_actions)?;
        policy.observe(store, &mut st, x.clone())?;
        imagined.push(x);
        current = next;
    }
    let future = (0..groups)
        .map(|gi| {
            let rs: Vec<f64> = predicted_rewards.iter().map(|r| r[gi]).collect();
            future_reward(&rs, gamma)
        })
        .collect();
    Ok(RolloutResult {
        window: st.window,
        imagined,
        predicted_rewards,
        future_reward: future,
    })
}

fn imagined_input<S: Scalar>(obs: &Tensor<S>, actions: &[usize], n_actions: usize) -> Result<Tensor<S>> {
    let (rows, od) = (obs.rows(), obs.cols());
    let mut data = Vec::with_capacity(rows * (od + n_actions));
    for (r, &a) in actions.iter().enumerate() {
        data.extend_from_slice(obs.row(r));
        data.extend((0..n_actions).map(|j| if j == a { S::one() } else { S::zero() }));
    }
    Tensor::new(vec![rows, od + n_actions], data)
}

/// Mean squared errors of the observation and reward heads on a batch.
pub fn prediction_errors<S: Scalar>(model: &InferenceNet, store: &ParamStore<S>, batch: &[InferenceRecord]) -> Result<(f64, f64)> {
    let mut obs_err = 0.0;
    let mut rew_err = 0.0;
    let mut count = 0usize;
    for rec in batch {
        let n = rec.actions.len();
        let flat: Vec<f32> = rec.observations.concat();
        let o = Tensor::from_f32(&[n, model.obs_dim], &flat)?;
        let (po, pr) = model.predict_step(store, &o, &rec.actions)?;
        for i in 0..n {
            let row = po.row(i);
            obs_err += row
                .iter()
                .zip(&rec.next_observations[i])
                .map(|(&p, &t)| Float::powi(p.as_f64() - t as f64, 2))
                .sum::<f64>()
                / model.obs_dim as f64;
            rew_err += Float::powi(pr[i] - rec.reward, 2);
        }
        count += n;
    }
    if count == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((obs_err / count as f64, rew_err / count as f64))
}
