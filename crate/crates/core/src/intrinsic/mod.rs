//! Mutual-information intrinsic reward.
//!
//! Two classifiers approximate `p(τ | o, z)` (which agent's trajectory
//! produced this observation and subtask vector) and `p(a | o)`. The reward
//! is `β1·log q_τ(τ | o, z) − β2·log q_a(a | o)`, a variational lower bound on
//! `I(τ; z) + I(o; τ | z) + I(a; τ | o) + H(a | o, τ)` up to the constant `H(τ)`.

mod audit;

pub use audit::{mi_bound_audit, MiAudit, TabularJoint};

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{DenseLayer, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Floor applied to log-probabilities inside the reward.
pub const LOG_PROB_FLOOR: f64 = -18.420_680_743_952_367; // ln(1e-8)

#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub hidden_dim: usize,
}

impl Default for IntrinsicConfig {
    fn default() -> Self {
        Self {
            beta1: 1.0,
            beta2: 1.0,
            hidden_dim: 64,
        }
    }
}

impl IntrinsicConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: alloc::format!("intrinsic.{field}"),
                    reason: "must be finite and non-negative".into(),
                });
            }
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config {
                field: "intrinsic.hidden_dim".into(),
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// Label of the trajectory class used by the trajectory classifier: the
/// agent's index, giving an `n_agents`-way contrastive target.
pub fn trajectory_class_label(agent: usize) -> usize {
    agent
}

/// Two-layer softmax classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub hidden: DenseLayer,
    pub out: DenseLayer,
}

impl Classifier {
    fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input: usize,
        hidden: usize,
        classes: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            hidden: DenseLayer::new(store, &alloc::format!("{name}.hidden"), input, hidden, rng),
            out: DenseLayer::new(store, &alloc::format!("{name}.out"), hidden, classes, rng),
        }
    }

    pub fn log_probs<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let h = self.hidden.forward(g, x)?;
        let h = g.relu(h);
        let logits = self.out.forward(g, h)?;
        Ok(g.log_softmax(logits))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.hidden.params().to_vec();
        p.extend(self.out.params());
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalNets {
    pub cfg: IntrinsicConfig,
    /// `q_τ(τ | o, z)` over `n_classes` trajectory labels.
    pub trajectory: Classifier,
    /// `q_a(a | o)`.
    pub action: Classifier,
    pub obs_dim: usize,
    pub z_dim: usize,
    pub n_classes: usize,
    pub n_actions: usize,
}

/// Classifier log-probabilities for a batch of rows.
#[derive(Clone, Copy, Debug)]
pub struct VariationalOutputs {
    /// `[rows, n_classes]`.
    pub trajectory: Var,
    /// `[rows, n_actions]`.
    pub action: Var,
}

impl VariationalNets {
    #[allow(clippy::too_many_arguments)]
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        cfg: IntrinsicConfig,
        obs_dim: usize,
        z_dim: usize,
        n_classes: usize,
        n_actions: usize,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        Ok(Self {
            trajectory: Classifier::new(store, "var.traj", obs_dim + z_dim, h, n_classes, rng),
            action: Classifier::new(store, "var.act", obs_dim, h, n_actions, rng),
            cfg,
            obs_dim,
            z_dim,
            n_classes,
            n_actions,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.trajectory.params();
        p.extend(self.action.params());
        p
    }

    /// `obs: [rows, obs_dim]`, `z: [rows, z_dim]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<'_, S>, obs: Var, z: Var) -> Result<VariationalOutputs> {
        let oz = g.concat(&[obs, z])?;
        let trajectory = self.trajectory.log_probs(g, oz)?;
        let action = self.action.log_probs(g, obs)?;
        Ok(VariationalOutputs { trajectory, action })
    }

    /// Per-row reward `β1·log q_τ(label) − β2·log q_a(action)` with both
    /// log-probabilities floored at `ln 1e-8`.
    pub fn intrinsic_reward<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        obs: &Tensor<S>,
        z: &Tensor<S>,
        labels: &[usize],
        actions: &[usize],
    ) -> Result<Vec<f64>> {
        let rows = obs.rows();
        if labels.len() != rows || actions.len() != rows {
            return dim_err("intrinsic reward rows", &[labels.len(), actions.len()], &[rows]);
        }
        let mut g = Graph::new(store);
        let o = g.constant(obs.clone());
        let zv = g.constant(z.clone());
        let out = self.forward(&mut g, o, zv)?;
        let (lt, la) = (g.value(out.trajectory), g.value(out.action));
        Ok((0..rows)
            .map(|r| {
                intrinsic_reward(
                    lt.at(r, labels[r]).as_f64(),
                    la.at(r, actions[r]).as_f64(),
                    self.cfg.beta1,
                    self.cfg.beta2,
                )
            })
            .collect())
    }

    /// Mean of the two cross-entropies over rows with positive `weights`
    /// (all rows when `weights` is `None`).
    pub fn variational_loss<S: Scalar>(
        &self,
        g: &mut Graph<'_, S>,
        out: VariationalOutputs,
        labels: &[usize],
        actions: &[usize],
        weights: Option<&[f64]>,
    ) -> Result<Var> {
        let lt = g.gather(out.trajectory, labels)?;
        let la = g.gather(out.action, actions)?;
        let ll = g.add(lt, la)?;
        let rows = labels.len();
        let w: Vec<f64> = match weights {
            Some(w) if w.len() == rows => w.to_vec(),
            Some(w) => return dim_err("variational loss weights", &[w.len()], &[rows]),
            None => vec![1.0; rows],
        };
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::Argument("variational loss needs at least one weighted row".into()));
        }
        let wv = g.constant_f64(&[rows, 1], &w)?;
        let weighted = g.mul(wv, ll)?;
        let s = g.sum(weighted);
        Ok(g.scale(s, -1.0 / total))
    }
}

/// `β1·max(log_tau, floor) − β2·max(log_act, floor)`.
pub fn intrinsic_reward(log_tau: f64, log_act: f64, beta1: f64, beta2: f64) -> f64 {
    beta1 * log_tau.max(LOG_PROB_FLOOR) - beta2 * log_act.max(LOG_PROB_FLOOR)
}

/// Fraction of rows whose most likely class equals the target.
pub fn classifier_accuracy<S: Scalar>(log_probs: &Tensor<S>, targets: &[usize], weights: &[f64]) -> f64 {
    let mut hit = 0.0;
    let mut total = 0.0;
    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
        if w <= 0.0 {
            continue;
        }
        let row = log_probs.row(r);
        let best = (0..row.len()).fold(0, |b, i| if row[i] > row[b] { i } else { b });
        total += w;
        if best == t {
            hit += w;
        }
    }
    if total > 0.0 {
        hit / total
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests;
