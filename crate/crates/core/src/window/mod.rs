//! Subtask recognition from a sliding set of trailing trajectory segments.
//!
//! At every step an agent looks back over windows of `1..=n_window` steps.
//! Each window is encoded by a segment GRU started from zero, the whole
//! trajectory by a running trajectory GRU, and multi-head attention (query:
//! trajectory encoding, keys and values: window encodings) fuses the windows
//! into one subtask vector `z`. The Q head reads the trajectory encoding, `z`
//! and the agent's id.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{dim_err, Error, Result};
use crate::numerics::{DenseLayer, Graph, GruCell, MultiHeadAttention, ParamId, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct WindowConfig {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    /// Width of the dense layer in front of each GRU.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub n_window: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub temperature: f64,
    /// One segment encoder per window size instead of a shared one.
    pub per_window_encoders: bool,
    /// Ablation: the fused subtask vector is replaced by zeros.
    pub disable_window: bool,
}

impl WindowConfig {
    pub fn new(obs_dim: usize, n_actions: usize, n_agents: usize) -> Self {
        Self {
            obs_dim,
            n_actions,
            n_agents,
            embed_dim: 64,
            hidden_dim: 64,
            n_window: 5,
            n_heads: 4,
            head_dim: 4,
            temperature: 1.0,
            per_window_encoders: false,
            disable_window: false,
        }
    }

    /// Per-step network input: observation then previous-action one-hot.
    pub fn input_dim(&self) -> usize {
        self.obs_dim + self.n_actions
    }

    pub fn z_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    /// Number of trailing positions the largest window touches.
    pub fn span(&self) -> usize {
        self.n_window + 1
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("obs_dim", self.obs_dim),
            ("n_actions", self.n_actions),
            ("n_agents", self.n_agents),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_window", self.n_window),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
        ];
        for (field, v) in checks {
            if v == 0 {
                return Err(Error::Config {
                    field: format!("model.{field}"),
                    reason: "must be positive".into(),
                });
            }
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config {
                field: "model.temperature".into(),
                reason: "must be a positive finite number".into(),
            });
        }
        Ok(())
    }
}

/// Builds the network input for one step.
pub fn step_input(obs: &[f32], prev_action: Option<usize>, n_actions: usize) -> Vec<f32> {
    let mut x = Vec::with_capacity(obs.len() + n_actions);
    x.extend_from_slice(obs);
    x.extend((0..n_actions).map(|a| if Some(a) == prev_action { 1.0 } else { 0.0 }));
    x
}

/// Steps `t-k..=t` of one agent's history; positions before the episode
/// start are zero rows with `mask == false`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySegment {
    pub window_size: usize,
    pub steps: Vec<Vec<f32>>,
    pub mask: Vec<bool>,
}

impl TrajectorySegment {
    pub fn padding(&self) -> usize {
        self.mask.iter().take_while(|&&m| !m).count()
    }
}

/// All windows ending at step `t`, sizes `1..=n_window`.
pub fn extract_segments(history: &[Vec<f32>], t: usize, n_window: usize) -> Result<Vec<TrajectorySegment>> {
    if n_window == 0 {
        return Err(Error::Argument("n_window must be at least 1".into()));
    }
    if t >= history.len() {
        return Err(Error::Argument(format!(
            "step {t} is outside a history of {} steps",
            history.len()
        )));
    }
    let width = history[0].len();
    Ok((1..=n_window)
        .map(|k| {
            let (steps, mask) = (0..=k)
                .map(|j| match (t + j).checked_sub(k) {
                    Some(i) => (history[i].clone(), true),
                    None => (vec![0.0; width], false),
                })
                .unzip();
            TrajectorySegment {
                window_size: k,
                steps,
                mask,
            }
        })
        .collect())
}

/// Batched inputs at the trailing `span` positions, oldest first.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowInput<S> {
    /// One `[rows, input_dim]` tensor per position.
    pub steps: Vec<Tensor<S>>,
    /// `masks[p][r]` is false where row `r` has no real step at position `p`.
    pub masks: Vec<Vec<bool>>,
}

impl<S: Scalar> WindowInput<S> {
    /// Window with no real steps yet.
    pub fn empty(rows: usize, input_dim: usize, span: usize) -> Self {
        Self {
            steps: vec![Tensor::zeros(&[rows, input_dim]); span],
            masks: vec![vec![false; rows]; span],
        }
    }

    pub fn rows(&self) -> usize {
        self.masks.first().map_or(0, Vec::len)
    }

    /// Slides the window forward by one real step `x: [rows, input_dim]`.
    pub fn push(&mut self, x: Tensor<S>) {
        let rows = self.rows();
        self.steps.remove(0);
        self.masks.remove(0);
        self.steps.push(x);
        self.masks.push(vec![true; rows]);
    }

    /// Single-row window holding one segment, left-aligned with zeros so that
    /// the segment occupies the last `window_size + 1` positions.
    pub fn from_segment(segment: &TrajectorySegment, span: usize) -> Result<Self> {
        let len = segment.steps.len();
        if len > span || len == 0 {
            return dim_err("segment window", &[len], &[span]);
        }
        let width = segment.steps[0].len();
        let mut w = Self::empty(1, width, span);
        for (p, (x, &m)) in segment.steps.iter().zip(&segment.mask).enumerate() {
            w.steps[span - len + p] = Tensor::from_f32(&[1, width], x)?;
            w.masks[span - len + p][0] = m;
        }
        Ok(w)
    }
}

/// Dense + ReLU embedding followed by a GRU.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentEncoder {
    pub fc: DenseLayer,
    pub gru: GruCell,
}

impl SegmentEncoder {
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        name: &str,
        input_dim: usize,
        embed_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            fc: DenseLayer::new(store, &format!("{name}.fc"), input_dim, embed_dim, rng),
            gru: GruCell::new(store, &format!("{name}.gru"), embed_dim, hidden_dim, rng),
        }
    }

    pub fn embed<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var) -> Result<Var> {
        let e = self.fc.forward(g, x)?;
        Ok(g.relu(e))
    }

    /// GRU over already embedded steps from a zero state; rows whose mask is
    /// false at a step keep their state unchanged.
    pub fn run<S: Scalar>(&self, g: &mut Graph<'_, S>, embedded: &[Var], masks: &[Vec<bool>]) -> Result<Var> {
        let rows = masks.first().map_or(1, Vec::len);
        let mut h = g.constant(Tensor::zeros(&[rows, self.gru.hidden_dim]));
        for (&x, mask) in embedded.iter().zip(masks) {
            h = masked_gru_step(g, &self.gru, x, h, mask)?;
        }
        Ok(h)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fc.params().to_vec();
        p.extend(self.gru.params());
        p
    }
}

fn masked_gru_step<S: Scalar>(g: &mut Graph<'_, S>, gru: &GruCell, x: Var, h: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&m| !m) {
        return Ok(h);
    }
    let next = gru.step(g, x, h)?;
    if mask.iter().all(|&m| m) {
        return Ok(next);
    }
    let col: Vec<S> = mask.iter().map(|&m| if m { S::one() } else { S::zero() }).collect();
    let m = g.constant(Tensor::new(vec![mask.len(), 1], col)?);
    let delta = g.sub(next, h)?;
    let delta = g.mul_col(m, delta)?;
    g.add(h, delta)
}

/// Graph handles produced by [`AgentNetwork::subtask`].
#[derive(Clone, Debug)]
pub struct SubtaskVars {
    pub z: Var,
    /// One `[rows, n_window]` matrix per head; empty when the window is disabled.
    pub weights: Vec<Var>,
    /// Per-window-size segment encodings, `k = 1..=n_window`.
    pub segments: Vec<Var>,
}

/// Shared per-agent network: trajectory encoder, segment encoder(s),
/// attention fusion and Q head.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentNetwork {
    pub cfg: WindowConfig,
    pub trajectory: SegmentEncoder,
    pub segment_encoders: Vec<SegmentEncoder>,
    pub attention: MultiHeadAttention,
    pub q_head: DenseLayer,
}

impl AgentNetwork {
    pub fn new<S: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<S>, cfg: WindowConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let (inp, emb, hid) = (cfg.input_dim(), cfg.embed_dim, cfg.hidden_dim);
        let trajectory = SegmentEncoder::new(store, "agent.traj", inp, emb, hid, rng);
        let n_enc = if cfg.per_window_encoders { cfg.n_window } else { 1 };
        let segment_encoders = (0..n_enc)
            .map(|k| {
                let name = if cfg.per_window_encoders {
                    format!("agent.seg{}", k + 1)
                } else {
                    "agent.seg".into()
                };
                SegmentEncoder::new(store, &name, inp, emb, hid, rng)
            })
            .collect();
        let attention = MultiHeadAttention::new(
            store,
            "agent.attn",
            hid,
            hid,
            cfg.n_heads,
            cfg.head_dim,
            cfg.temperature,
            rng,
        );
        let q_in = hid + cfg.z_dim() + cfg.n_agents;
        let q_head = DenseLayer::new(store, "agent.q", q_in, cfg.n_actions, rng);
        Ok(Self {
            cfg,
            trajectory,
            segment_encoders,
            attention,
            q_head,
        })
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.trajectory.params();
        for e in &self.segment_encoders {
            p.extend(e.params());
        }
        p.extend(self.attention.params());
        p.extend(self.q_head.params());
        p
    }

    fn encoder_for(&self, k: usize) -> &SegmentEncoder {
        if self.cfg.per_window_encoders {
            &self.segment_encoders[k - 1]
        } else {
            &self.segment_encoders[0]
        }
    }

    /// Advances the trajectory GRU by one step.
    pub fn trajectory_step<S: Scalar>(&self, g: &mut Graph<'_, S>, x: Var, h: Var) -> Result<Var> {
        let e = self.trajectory.embed(g, x)?;
        self.trajectory.gru.step(g, e, h)
    }

    /// Encodes windows `k = 1..=n_window` of the trailing positions.
    pub fn segment_encodings<S: Scalar>(&self, g: &mut Graph<'_, S>, input: &WindowInput<S>) -> Result<Vec<Var>> {
        let span = self.cfg.span();
        if input.steps.len() != span || input.masks.len() != span {
            return dim_err("window positions", &[input.steps.len()], &[span]);
        }
        let xs: Vec<Option<Var>> = input
            .steps
            .iter()
            .zip(&input.masks)
            .map(|(x, m)| m.iter().any(|&v| v).then(|| g.constant(x.clone())))
            .collect();
        let dummy = g.constant(Tensor::zeros(&[input.rows().max(1), self.cfg.embed_dim]));
        let mut shared: Option<Vec<Var>> = None;
        let mut out = Vec::with_capacity(self.cfg.n_window);
        for k in 1..=self.cfg.n_window {
            let enc = self.encoder_for(k);
            let first = span - 1 - k;
            let embedded = if self.cfg.per_window_encoders {
                embed_positions(g, enc, &xs[first..], dummy)?
            } else {
                if shared.is_none() {
                    shared = Some(embed_positions(g, enc, &xs, dummy)?);
                }
                shared.as_ref().expect("embedded above")[first..].to_vec()
            };
            out.push(enc.run(g, &embedded, &input.masks[first..])?);
        }
        Ok(out)
    }

    /// Attention fusion with the trajectory encoding as query.
    pub fn fuse<S: Scalar>(&self, g: &mut Graph<'_, S>, h_traj: Var, segments: &[Var]) -> Result<(Var, Vec<Var>)> {
        let out = self.attention.forward(g, h_traj, segments, segments)?;
        Ok((out.output, out.weights))
    }

    pub fn subtask<S: Scalar>(&self, g: &mut Graph<'_, S>, h_traj: Var, input: &WindowInput<S>) -> Result<SubtaskVars> {
        if self.cfg.disable_window {
            let rows = g.value(h_traj).rows();
            let z = g.constant(Tensor::zeros(&[rows, self.cfg.z_dim()]));
            return Ok(SubtaskVars {
                z,
                weights: Vec::new(),
                segments: Vec::new(),
            });
        }
        let segments = self.segment_encodings(g, input)?;
        let (z, weights) = self.fuse(g, h_traj, &segments)?;
        Ok(SubtaskVars { z, weights, segments })
    }

    /// Q values `[rows, n_actions]` from `concat(h_traj, z, onehot(agent))`.
    pub fn q_values<S: Scalar>(&self, g: &mut Graph<'_, S>, h_traj: Var, z: Var, agent_ids: &[usize]) -> Result<Var> {
        let n = self.cfg.n_agents;
        if agent_ids.len() != g.value(h_traj).rows() || agent_ids.iter().any(|&i| i >= n) {
            return dim_err("agent ids", &[agent_ids.len()], &[g.value(h_traj).rows(), n]);
        }
        let mut ids = vec![S::zero(); agent_ids.len() * n];
        for (r, &i) in agent_ids.iter().enumerate() {
            ids[r * n + i] = S::one();
        }
        let ids = g.constant(Tensor::new(vec![agent_ids.len(), n], ids)?);
        let input = g.concat(&[h_traj, z, ids])?;
        self.q_head.forward(g, input)
    }

    /// Advances the trajectory encoding and the window by one real step.
    pub fn observe<S: Scalar>(&self, store: &ParamStore<S>, state: &mut AgentRecurrentState<S>, x: Tensor<S>) -> Result<()> {
        let mut g = Graph::new(store);
        let xv = g.constant(x.clone());
        let h = g.constant(state.h_traj.clone());
        let h = self.trajectory_step(&mut g, xv, h)?;
        state.h_traj = g.value(h).clone();
        state.window.push(x);
        Ok(())
    }

    /// Q values and subtask representation for the given trajectory encoding
    /// and window. No state is modified.
    pub fn evaluate<S: Scalar>(
        &self,
        store: &ParamStore<S>,
        h_traj: &Tensor<S>,
        window: &WindowInput<S>,
        agent_ids: &[usize],
    ) -> Result<AgentOutputs<S>> {
        let mut g = Graph::new(store);
        let h = g.constant(h_traj.clone());
        let sub = self.subtask(&mut g, h, window)?;
        let q = self.q_values(&mut g, h, sub.z, agent_ids)?;
        Ok(AgentOutputs {
            q: g.value(q).clone(),
            representation: SubtaskRepresentation {
                z: g.value(sub.z).clone(),
                attention_weights: sub.weights.iter().map(|&w| g.value(w).clone()).collect(),
            },
        })
    }
}

fn embed_positions<S: Scalar>(
    g: &mut Graph<'_, S>,
    enc: &SegmentEncoder,
    xs: &[Option<Var>],
    dummy: Var,
) -> Result<Vec<Var>> {
    xs.iter()
        .map(|x| match x {
            Some(x) => enc.embed(g, *x),
            None => Ok(dummy),
        })
        .collect()
}

/// Per-row recurrent state: trajectory encoding and the trailing inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentRecurrentState<S> {
    pub h_traj: Tensor<S>,
    pub window: WindowInput<S>,
}

impl<S: Scalar> AgentRecurrentState<S> {
    /// Zero state for `rows` agent rows at episode start.
    pub fn new(cfg: &WindowConfig, rows: usize) -> Self {
        Self {
            h_traj: Tensor::zeros(&[rows, cfg.hidden_dim]),
            window: WindowInput::empty(rows, cfg.input_dim(), cfg.span()),
        }
    }
}

/// Fused subtask vectors and attention weights for a batch of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskRepresentation<S> {
    /// `[rows, z_dim]`.
    pub z: Tensor<S>,
    /// One `[rows, n_window]` tensor per head.
    pub attention_weights: Vec<Tensor<S>>,
}

impl<S: Scalar> SubtaskRepresentation<S> {
    /// Head-averaged attention weights of one row.
    pub fn mean_weights(&self, row: usize) -> Vec<f64> {
        let Some(first) = self.attention_weights.first() else {
            return Vec::new();
        };
        let mut acc = vec![0.0; first.cols()];
        for w in &self.attention_weights {
            for (a, v) in acc.iter_mut().zip(w.row(row)) {
                *a += v.as_f64();
            }
        }
        let h = self.attention_weights.len() as f64;
        acc.iter().map(|a| a / h).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentOutputs<S> {
    /// `[rows, n_actions]`.
    pub q: Tensor<S>,
    pub representation: SubtaskRepresentation<S>,
}

/// Q values with unavailable actions replaced by `-inf`.
pub fn masked_q_values<S: Scalar>(q: &[S], available: &[bool]) -> Vec<f64> {
    q.iter()
        .zip(available)
        .map(|(&v, &ok)| if ok { v.as_f64() } else { f64::NEG_INFINITY })
        .collect()
}

/// Highest-valued available action, lowest index on ties.
pub fn greedy_action<S: Scalar>(q: &[S], available: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, S)> = None;
    for (a, (&v, &ok)) in q.iter().zip(available).enumerate() {
        if ok && best.is_none_or(|(_, b)| v > b) {
            best = Some((a, v));
        }
    }
    best.map(|(a, _)| a)
}

#[cfg(test)]
mod tests;
