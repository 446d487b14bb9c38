//! Monotonic value mixing conditioned on the global state and the agents'
//! subtask vectors, the TD objective built on it, and target copies.
//!
//! Hypernetworks read `concat(state, z_1..z_n)` and emit the weights of a
//! two-layer mixer. Taking the absolute value of every generated weight keeps
//! `Q_total` non-decreasing in each agent's Q, so per-agent greedy actions are
//! also jointly greedy.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{DenseLayer, Graph, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MixerConfig {
    pub n_agents: usize,
    pub state_dim: usize,
    /// Width of each agent's subtask vector.
    pub z_dim: usize,
    pub mix_dim: usize,
    pub hyper_hidden: usize,
}

impl MixerConfig {
    pub fn new(n_agents: usize, state_dim: usize, z_dim: usize) -> Self {
        Self {
            n_agents,
            state_dim,
            z_dim,
            mix_dim: 32,
            hyper_hidden: 64,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.state_dim + self.n_agents * self.z_dim
    }

    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("n_agents", self.n_agents),
            ("state_dim", self.state_dim),
            ("z_dim", self.z_dim),
            ("mix_dim", self.mix_dim),
            ("hyper_hidden", self.hyper_hidden),
        ] {
            if v == 0 {
                return Err(Error::Config {
                    field: format!("mixer.{field}"),
                    reason: "must be positive".into(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingNet {
    pub cfg: MixerConfig,
    /// Layer-1 weights `[n_agents × mix_dim]`, row-major per sample.
    pub w1_hidden: DenseLayer,
    pub w1_out: DenseLayer,
    pub b1: DenseLayer,
    pub w2_hidden: DenseLayer,
    pub w2_out: DenseLayer,
    pub b2_hidden: DenseLayer,
    pub b2_out: DenseLayer,
}

impl MixingNet {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, cfg: MixerConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (i, h, m) = (cfg.input_dim(), cfg.hyper_hidden, cfg.mix_dim);
        Ok(Self {
            w1_hidden: DenseLayer::new(store, "mixer.w1.hidden", i, h, rng),
            w1_out: DenseLayer::new(store, "mixer.w1.out", h, cfg.n_agents * m, rng),
            b1: DenseLayer::new(store, "mixer.b1", i, m, rng),
            w2_hidden: DenseLayer::new(store, "mixer.w2.hidden", i, h, rng),
            w2_out: DenseLayer::new(store, "mixer.w2.out", h, m, rng),
            b2_hidden: DenseLayer::new(store, "mixer.b2.hidden", i, m, rng),
            b2_out: DenseLayer::new(store, "mixer.b2.out", m, 1, rng),
            cfg,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [
            &self.w1_hidden,
            &self.w1_out,
            &self.b1,
            &self.w2_hidden,
            &self.w2_out,
            &self.b2_hidden,
            &self.b2_out,
        ]
        .iter()
        .flat_map(|l| l.params())
        .collect()
    }

    fn two_layer<S: Scalar>(g: &mut Graph<'_, S>, a: &DenseLayer, b: &DenseLayer, x: Var) -> Result<Var> {
        let h = a.forward(g, x)?;
        let h = g.relu(h);
        b.forward(g, h)
    }

    /// `qs: [R, n_agents]`, `state: [R, state_dim]`, `z: [R, n_agents·z_dim]`
    /// with agents in index order. Returns `Q_total: [R, 1]`.
    pub fn mix<S: Scalar>(&self, g: &mut Graph<'_, S>, qs: Var, state: Var, z: Var) -> Result<Var> {
        let c = &self.cfg;
        let rows = g.value(qs).rows();
        if g.value(qs).cols() != c.n_agents
            || g.value(state).shape() != [rows, c.state_dim]
            || g.value(z).shape() != [rows, c.n_agents * c.z_dim]
        {
            return dim_err(
                "mix",
                g.value(qs).shape(),
                &[rows, c.n_agents, c.state_dim, c.n_agents * c.z_dim],
            );
        }
        let input = g.concat(&[state, z])?;

        let w1 = Self::two_layer(g, &self.w1_hidden, &self.w1_out, input)?;
        let w1 = g.abs(w1);
        let b1 = self.b1.forward(g, input)?;
        let hidden = g.batched_vec_mat(qs, w1, c.n_agents, c.mix_dim)?;
        let hidden = g.add(hidden, b1)?;
        let hidden = g.elu(hidden);

        let w2 = Self::two_layer(g, &self.w2_hidden, &self.w2_out, input)?;
        let w2 = g.abs(w2);
        let b2 = Self::two_layer(g, &self.b2_hidden, &self.b2_out, input)?;
        let out = g.row_dot(hidden, w2)?;
        g.add(out, b2)
    }

    /// Single-sample convenience wrapper around [`MixingNet::mix`].
    pub fn mix_values<S: Scalar>(&self, store: &ParamStore<S>, qs: &[f64], state: &[f64], z: &[f64]) -> Result<f64> {
        let mut g = Graph::new(store);
        let q = g.constant(Tensor::from_f64(&[1, qs.len()], qs)?);
        let s = g.constant(Tensor::from_f64(&[1, state.len()], state)?);
        let zv = g.constant(Tensor::from_f64(&[1, z.len()], z)?);
        let out = self.mix(&mut g, q, s, zv)?;
        Ok(g.value(out).data()[0].as_f64())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TdConfig {
    pub gamma: f64,
    pub beta_mi: f64,
    pub beta_f: f64,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            beta_mi: 5e-2,
            beta_f: 1e-2,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config {
                field: "train.gamma".into(),
                reason: "must lie in (0, 1]".into(),
            });
        }
        for (field, v) in [("beta_mi", self.beta_mi), ("beta_f", self.beta_f)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config {
                    field: format!("train.{field}"),
                    reason: "must be finite and non-negative".into(),
                });
            }
        }
        Ok(())
    }

    /// `r + β_MI·r_MI + β_f·r_f + γ·max Q⁻`, without the bootstrap on terminal steps.
    pub fn target(&self, reward: f64, r_mi: f64, r_f: f64, terminated: bool, next_max: f64) -> f64 {
        let boot = if terminated { 0.0 } else { self.gamma * next_max };
        reward + self.beta_mi * r_mi + self.beta_f * r_f + boot
    }
}

/// Mean squared error between `q: [R, 1]` and constant `targets` over rows
/// with `mask > 0`. Rows with zero mask contribute nothing; an all-zero mask
/// gives a zero loss.
pub fn td_loss<S: Scalar>(g: &mut Graph<'_, S>, q: Var, targets: &[f64], mask: &[f64]) -> Result<Var> {
    let rows = g.value(q).rows();
    if g.value(q).cols() != 1 || targets.len() != rows || mask.len() != rows {
        return dim_err("td_loss", g.value(q).shape(), &[targets.len(), mask.len()]);
    }
    let y = g.constant_f64(&[rows, 1], targets)?;
    let diff = g.sub(q, y)?;
    let m = g.constant_f64(&[rows, 1], mask)?;
    let diff = g.mul(diff, m)?;
    let sq = g.square(diff);
    let s = g.sum(sq);
    let total: f64 = mask.iter().sum();
    Ok(g.scale(s, if total > 0.0 { 1.0 / total } else { 0.0 }))
}

/// Frozen copy of the live parameters used for bootstrap targets.
///
/// Networks refer to parameters by id, so the same network structs evaluate
/// against either store.
#[derive(Clone, Debug)]
pub struct TargetNetworks<S> {
    pub store: ParamStore<S>,
    /// Episodes between hard copies.
    pub update_interval: usize,
    last_sync: usize,
}

impl<S: Scalar> TargetNetworks<S> {
    pub fn new(live: &ParamStore<S>, update_interval: usize) -> Self {
        Self {
            store: live.clone(),
            update_interval,
            last_sync: 0,
        }
    }

    pub fn sync(&mut self, live: &ParamStore<S>) -> Result<()> {
        self.store.copy_values_from(live)
    }

    /// Copies when at least `update_interval` episodes passed since the last
    /// copy. Returns whether a copy happened.
    pub fn maybe_sync(&mut self, live: &ParamStore<S>, episodes: usize) -> Result<bool> {
        if episodes >= self.last_sync + self.update_interval.max(1) {
            self.sync(live)?;
            self.last_sync = episodes;
            return Ok(true);
        }
        Ok(false)
    }

    pub fn last_sync(&self) -> usize {
        self.last_sync
    }
}

pub fn sync_targets<S: Scalar>(live: &ParamStore<S>, targets: &mut TargetNetworks<S>) -> Result<()> {
    targets.sync(live)
}
