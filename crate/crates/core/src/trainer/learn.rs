use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::batch::{EpisodeBatch, ReplayBuffer};
use super::collect::{collect_episodes, CollectOptions, EvalStats};
use super::{epsilon_at, TrainConfig};
use crate::env::{episode_seed, DecPomdpSpec, MultiAgentEnv};
use crate::error::{dim_err, Error, Result};
use crate::intrinsic::{classifier_accuracy, VariationalNets};
use crate::mixer::{td_loss, MixerConfig, MixingNet, TargetNetworks};
use crate::numerics::{Graph, ParamId, ParamStore, RmsPropState, Scalar, Tensor, Var};
use crate::window::{AgentNetwork, WindowConfig, WindowInput};
use crate::worldmodel::{prediction_errors, InferenceBuffer, InferenceNet, WorldModelConfig};

const EVAL_SEED_SALT: u64 = 0x5EED_E7A1_0000_0001;

/// Every network of one run. All hold parameter ids into a shared store.
#[derive(Clone, Debug, PartialEq)]
pub struct Networks {
    pub agent: AgentNetwork,
    /// Absent in independent Q-learning mode.
    pub mixer: Option<MixingNet>,
    pub variational: Option<VariationalNets>,
    /// Absent when imagination is off.
    pub model: Option<InferenceNet>,
}

impl Networks {
    /// Builds the networks for `spec`, creating parameters in a fixed order:
    /// agent, mixer, variational classifiers, inference model.
    pub fn new<S: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<S>,
        spec: &DecPomdpSpec,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let window = WindowConfig {
            obs_dim: spec.obs_dim,
            n_actions: spec.n_actions,
            n_agents: spec.n_agents,
            ..cfg.window.clone()
        };
        let agent = AgentNetwork::new(store, window, rng)?;
        let z_dim = agent.cfg.z_dim();
        let mixer = if cfg.disable_mixer {
            None
        } else {
            let mc = MixerConfig {
                n_agents: spec.n_agents,
                state_dim: spec.state_dim,
                z_dim,
                ..cfg.mixer.clone()
            };
            Some(MixingNet::new(store, mc, rng)?)
        };
        let variational = if cfg.disable_intrinsic {
            None
        } else {
            Some(VariationalNets::new(
                store,
                cfg.intrinsic.clone(),
                spec.obs_dim,
                z_dim,
                spec.n_agents,
                spec.n_actions,
                rng,
            )?)
        };
        let model = if cfg.n_f_step() == 0 {
            None
        } else {
            let wc = WorldModelConfig {
                n_f_step: cfg.n_f_step(),
                ..cfg.world.clone()
            };
            Some(InferenceNet::new(store, wc, spec.obs_dim, spec.n_actions, rng)?)
        };
        Ok(Self {
            agent,
            mixer,
            variational,
            model,
        })
    }

    /// Parameters trained on the TD loss: agent network and mixer.
    pub fn value_params(&self) -> Vec<ParamId> {
        let mut p = self.agent.params();
        if let Some(m) = &self.mixer {
            p.extend(m.params());
        }
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainMetrics {
    pub l_td: f64,
    pub l_var: Option<f64>,
    pub l_d: Option<f64>,
    /// Mean chosen `Q_total` (per-agent Q in independent mode) over valid steps.
    pub mean_q: f64,
    /// Value-network gradient norm before clipping.
    pub grad_norm: f64,
    pub mean_r_mi: f64,
    pub mean_r_f: f64,
    /// Training-batch accuracy of the trajectory and action classifiers.
    pub traj_accuracy: Option<f64>,
    pub action_accuracy: Option<f64>,
    /// Model prediction errors on its sampled batch, before the update.
    pub obs_mse: Option<f64>,
    pub reward_mse: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    /// Environment steps so far.
    pub step: u64,
    pub episodes: u64,
    pub train_steps: u64,
    pub epsilon: f64,
    pub train: Option<TrainMetrics>,
    pub eval: Option<EvalStats>,
}

/// Episodes padded to a common length, laid out row-major as
/// `(slot, episode, agent)`.
struct Padded<S> {
    episodes: usize,
    slots: usize,
    n_agents: usize,
    inputs: Vec<Tensor<S>>,
    window: WindowInput<S>,
    states: Tensor<S>,
    actions: Vec<usize>,
    available: Vec<bool>,
}

impl<S: Scalar> Padded<S> {
    fn new(batch: &[&EpisodeBatch], span: usize) -> Result<Self> {
        let first = batch.first().ok_or_else(|| Error::Argument("empty training batch".into()))?;
        let l = first.layout;
        if let Some(other) = batch.iter().find(|e| e.layout != l) {
            return dim_err("episode layouts", &[l.n_agents, l.obs_dim], &[other.layout.n_agents, other.layout.obs_dim]);
        }
        let (nb, n, d, na) = (batch.len(), l.n_agents, l.input_dim(), l.n_actions);
        let slots = batch.iter().map(|e| e.len).max().unwrap_or(0) + 1;
        let rows = nb * n;
        let mut inputs = Vec::with_capacity(slots);
        let mut buf = Vec::with_capacity(d);
        for t in 0..slots {
            let mut x = Vec::with_capacity(rows * d);
            for e in batch {
                for i in 0..n {
                    buf.clear();
                    if t <= e.len {
                        e.input(t, i, &mut buf);
                    } else {
                        buf.resize(d, 0.0);
                    }
                    x.extend(buf.iter().map(|&v| S::of(v as f64)));
                }
            }
            inputs.push(Tensor::new(vec![rows, d], x)?);
        }

        let n_f = l.n_f_step as isize;
        let mut steps = Vec::with_capacity(span);
        let mut masks = Vec::with_capacity(span);
        for p in 0..span {
            let mut x = Vec::with_capacity(slots * rows * d);
            let mut m = Vec::with_capacity(slots * rows);
            for t in 0..slots {
                let s = t as isize + n_f - (span as isize - 1) + p as isize;
                for (b, e) in batch.iter().enumerate() {
                    for i in 0..n {
                        let real = s >= 0 && s <= t as isize && s as usize <= e.len;
                        let imagined = s > t as isize && t <= e.len;
                        if real {
                            x.extend_from_slice(inputs[s as usize].row(b * n + i));
                        } else if imagined {
                            let k = (s - t as isize - 1) as usize;
                            x.extend(e.imagined(t, k, i).iter().map(|&v| S::of(v as f64)));
                        } else {
                            x.extend(core::iter::repeat_n(S::zero(), d));
                        }
                        m.push(real || imagined);
                    }
                }
            }
            steps.push(Tensor::new(vec![slots * rows, d], x)?);
            masks.push(m);
        }

        let mut states = Vec::with_capacity(slots * nb * l.state_dim);
        let mut actions = Vec::with_capacity(slots * rows);
        let mut available = Vec::with_capacity(slots * rows * na);
        for t in 0..slots {
            for e in batch {
                if t <= e.len {
                    states.extend(e.state(t).iter().map(|&v| S::of(v as f64)));
                } else {
                    states.extend(core::iter::repeat_n(S::zero(), l.state_dim));
                }
                for i in 0..n {
                    actions.push(if t < e.len { e.action(t, i) } else { 0 });
                    if t <= e.len {
                        available.extend_from_slice(e.available(t, i));
                    } else {
                        available.extend(core::iter::repeat_n(false, na));
                    }
                }
            }
        }
        Ok(Self {
            episodes: nb,
            slots,
            n_agents: n,
            inputs,
            window: WindowInput { steps, masks },
            states: Tensor::new(vec![slots * nb, l.state_dim], states)?,
            actions,
            available,
        })
    }
}

/// Q values `[slots·B·n, n_actions]` and subtask vectors for every slot.
fn agent_forward<S: Scalar>(agent: &AgentNetwork, g: &mut Graph<'_, S>, p: &Padded<S>) -> Result<(Var, Var)> {
    let rows = p.episodes * p.n_agents;
    let mut h = g.constant(Tensor::zeros(&[rows, agent.cfg.hidden_dim]));
    let mut hs = Vec::with_capacity(p.slots);
    for x in &p.inputs {
        let xv = g.constant(x.clone());
        h = agent.trajectory_step(g, xv, h)?;
        hs.push(h);
    }
    let all = g.stack_rows(&hs)?;
    let sub = agent.subtask(g, all, &p.window)?;
    let ids: Vec<usize> = (0..p.slots * rows).map(|r| r % p.n_agents).collect();
    let q = agent.q_values(g, all, sub.z, &ids)?;
    Ok((q, sub.z))
}

/// Single learner owning parameters, targets, optimisers and buffers.
#[derive(Clone, Debug)]
pub struct Learner<S: Scalar> {
    pub cfg: TrainConfig,
    pub spec: DecPomdpSpec,
    pub nets: Networks,
    pub store: ParamStore<S>,
    pub targets: TargetNetworks<S>,
    pub replay: ReplayBuffer,
    pub transitions: InferenceBuffer,
    value_opt: RmsPropState<S>,
    var_opt: Option<RmsPropState<S>>,
    model_opt: Option<RmsPropState<S>>,
    rng: ChaCha8Rng,
    seed: u64,
    pub env_steps: u64,
    pub episodes: u64,
    pub train_steps: u64,
}

impl<S: Scalar> Learner<S> {
    pub fn new(spec: DecPomdpSpec, cfg: TrainConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let nets = Networks::new(&mut store, &spec, &cfg, &mut rng)?;
        let opt = |store: &ParamStore<S>, ids: Vec<ParamId>| RmsPropState::new(store, ids, cfg.lr, cfg.rms_alpha, cfg.rms_eps);
        let value_opt = opt(&store, nets.value_params());
        let var_opt = nets.variational.as_ref().map(|v| opt(&store, v.params()));
        let model_opt = nets.model.as_ref().map(|m| opt(&store, m.params()));
        Ok(Self {
            targets: TargetNetworks::new(&store, cfg.target_update_interval),
            replay: ReplayBuffer::new(cfg.buffer_capacity),
            transitions: InferenceBuffer::new(cfg.inference_capacity),
            value_opt,
            var_opt,
            model_opt,
            rng,
            seed,
            env_steps: 0,
            episodes: 0,
            train_steps: 0,
            nets,
            store,
            spec,
            cfg,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn epsilon(&self) -> f64 {
        epsilon_at(&self.cfg.epsilon, self.env_steps)
    }

    /// One ε-greedy episode per instance; episodes go to the replay buffer
    /// and their transitions to the model buffer.
    pub fn collect<E: MultiAgentEnv>(&mut self, envs: &mut [E]) -> Result<Vec<EpisodeBatch>> {
        let seeds: Vec<u64> = (0..envs.len() as u64).map(|b| episode_seed(self.seed, self.episodes + b)).collect();
        let opts = CollectOptions {
            epsilon: self.epsilon(),
            gamma: self.cfg.td.gamma,
            use_rollout: true,
            training: true,
        };
        let out = collect_episodes(&self.nets, &self.store, envs, &seeds, &opts, &mut self.rng)?;
        for e in &out.episodes {
            e.validate()?;
            self.replay.push(e.clone());
        }
        for t in out.transitions {
            self.transitions.push(t);
        }
        self.env_steps += out.env_steps;
        self.episodes += envs.len() as u64;
        Ok(out.episodes)
    }

    /// Greedy episodes on a fixed seed sequence, independent of training
    /// progress, so repeated calls with unchanged parameters agree.
    pub fn evaluate<E: MultiAgentEnv>(&self, envs: &mut [E], n_episodes: usize) -> Result<EvalStats> {
        let opts = CollectOptions {
            epsilon: 0.0,
            gamma: self.cfg.td.gamma,
            use_rollout: self.cfg.world.use_at_execution,
            training: false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut all = Vec::with_capacity(n_episodes);
        while all.len() < n_episodes {
            let m = envs.len().min(n_episodes - all.len());
            let seeds: Vec<u64> = (0..m)
                .map(|b| episode_seed(self.seed ^ EVAL_SEED_SALT, (all.len() + b) as u64))
                .collect();
            let out = collect_episodes(&self.nets, &self.store, &mut envs[..m], &seeds, &opts, &mut rng)?;
            all.extend(out.episodes);
        }
        Ok(EvalStats::from_episodes(&all))
    }

    /// Samples a batch and updates every network. `None` while the replay
    /// buffer holds fewer than `batch_size` episodes.
    pub fn train_step(&mut self) -> Result<Option<TrainMetrics>> {
        let replay = core::mem::replace(&mut self.replay, ReplayBuffer::new(1));
        let result = match replay.sample(self.cfg.batch_size, &mut self.rng) {
            Some(batch) => self.train_on_batch(&batch).map(Some),
            None => Ok(None),
        };
        self.replay = replay;
        let Some(mut metrics) = result? else {
            return Ok(None);
        };
        if let Some((l_d, obs_mse, reward_mse)) = self.model_update()? {
            metrics.l_d = Some(l_d);
            metrics.obs_mse = Some(obs_mse);
            metrics.reward_mse = Some(reward_mse);
        }
        Ok(Some(metrics))
    }

    /// TD update of agent and mixer, then the variational update, on one batch.
    pub fn train_on_batch(&mut self, batch: &[&EpisodeBatch]) -> Result<TrainMetrics> {
        let (l_td, mean_q, grad_norm) = self.value_update(batch)?;
        let var = self.variational_update(batch)?;
        let steps: usize = batch.iter().map(|e| e.len).sum();
        let denom = steps.max(1) as f64;
        self.train_steps += 1;
        Ok(TrainMetrics {
            l_td,
            l_var: var.map(|v| v.0),
            l_d: None,
            mean_q,
            grad_norm,
            mean_r_mi: batch.iter().flat_map(|e| &e.r_mi).sum::<f64>() / denom,
            mean_r_f: batch.iter().flat_map(|e| &e.r_f).sum::<f64>() / denom,
            traj_accuracy: var.map(|v| v.1),
            action_accuracy: var.map(|v| v.2),
            obs_mse: None,
            reward_mse: None,
        })
    }

    fn value_update(&mut self, batch: &[&EpisodeBatch]) -> Result<(f64, f64, f64)> {
        let p = Padded::<S>::new(batch, self.nets.agent.cfg.span())?;
        let next = self.target_values(&p)?;
        let (nb, n) = (p.episodes, p.n_agents);
        let per = if self.nets.mixer.is_some() { 1 } else { n };
        let units = p.slots * nb * per;
        let mut targets = vec![0.0; units];
        let mut mask = vec![0.0; units];
        for t in 0..p.slots {
            for (b, e) in batch.iter().enumerate() {
                if t >= e.len {
                    continue;
                }
                for i in 0..per {
                    let u = (t * nb + b) * per + i;
                    let nu = ((t + 1) * nb + b) * per + i;
                    targets[u] = self.cfg.td.target(e.rewards[t], e.r_mi[t], e.r_f[t], e.terminated[t], next[nu]);
                    mask[u] = 1.0;
                }
            }
        }

        let mut g = Graph::new(&self.store);
        let (q, z) = agent_forward(&self.nets.agent, &mut g, &p)?;
        let chosen = g.gather(q, &p.actions)?;
        let q_out = match &self.nets.mixer {
            Some(m) => {
                let qs = g.reshape(chosen, &[p.slots * nb, n])?;
                let zs = g.reshape(z, &[p.slots * nb, n * m.cfg.z_dim])?;
                let st = g.constant(p.states.clone());
                m.mix(&mut g, qs, st, zs)?
            }
            None => chosen,
        };
        let loss = td_loss(&mut g, q_out, &targets, &mask)?;
        let l_td = g.value(loss).data()[0].as_f64();
        let total: f64 = mask.iter().sum();
        let mean_q = g
            .value(q_out)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v.as_f64() * m)
            .sum::<f64>()
            / total.max(1.0);
        let grads = g.backward(loss)?;
        drop(g);
        let ids = self.nets.value_params();
        self.store.zero_grads();
        self.store.accumulate(&grads);
        let norm = self.store.clip_grad_norm(&ids, S::of(self.cfg.grad_clip)).as_f64();
        self.value_opt.step(&mut self.store);
        Ok((l_td, mean_q, norm))
    }

    /// Bootstrap values per slot from the target networks: `Q⁻_total` of the
    /// per-agent greedy actions, or the per-agent maxima without a mixer.
    fn target_values(&self, p: &Padded<S>) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.targets.store);
        let (q, z) = agent_forward(&self.nets.agent, &mut g, p)?;
        let qt = g.value(q);
        let na = qt.cols();
        let best: Vec<f64> = (0..qt.rows())
            .map(|r| {
                let avail = &p.available[r * na..(r + 1) * na];
                qt.row(r)
                    .iter()
                    .zip(avail)
                    .filter(|(_, &a)| a)
                    .map(|(v, _)| v.as_f64())
                    .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
                    .unwrap_or(0.0)
            })
            .collect();
        let Some(m) = &self.nets.mixer else {
            return Ok(best);
        };
        let units = p.slots * p.episodes;
        let qs = g.constant(Tensor::from_f64(&[units, p.n_agents], &best)?);
        let zs = g.reshape(z, &[units, p.n_agents * m.cfg.z_dim])?;
        let st = g.constant(p.states.clone());
        let out = m.mix(&mut g, qs, st, zs)?;
        Ok(g.value(out).to_f64_vec())
    }

    /// Loss and the two classifier accuracies.
    fn variational_update(&mut self, batch: &[&EpisodeBatch]) -> Result<Option<(f64, f64, f64)>> {
        let (Some(var), Some(opt)) = (&self.nets.variational, self.var_opt.as_mut()) else {
            return Ok(None);
        };
        let l = batch[0].layout;
        let mut obs = Vec::new();
        let mut z = Vec::new();
        let mut labels = Vec::new();
        let mut actions = Vec::new();
        for e in batch {
            for t in 0..e.len {
                for i in 0..l.n_agents {
                    obs.extend_from_slice(e.obs(t, i));
                    z.extend_from_slice(e.z(t, i));
                    labels.push(crate::intrinsic::trajectory_class_label(i));
                    actions.push(e.action(t, i));
                }
            }
        }
        if labels.is_empty() {
            return Ok(None);
        }
        let rows = labels.len();
        let mut g = Graph::new(&self.store);
        let o = g.constant(Tensor::from_f32(&[rows, l.obs_dim], &obs)?);
        let zv = g.constant(Tensor::from_f32(&[rows, l.z_dim], &z)?);
        let out = var.forward(&mut g, o, zv)?;
        let loss = var.variational_loss(&mut g, out, &labels, &actions, None)?;
        let value = g.value(loss).data()[0].as_f64();
        let ones = vec![1.0; rows];
        let traj_acc = classifier_accuracy(g.value(out.trajectory), &labels, &ones);
        let act_acc = classifier_accuracy(g.value(out.action), &actions, &ones);
        let grads = g.backward(loss)?;
        drop(g);
        self.store.zero_grads();
        self.store.accumulate(&grads);
        self.store.clip_grad_norm(&var.params(), S::of(self.cfg.grad_clip));
        opt.step(&mut self.store);
        Ok(Some((value, traj_acc, act_acc)))
    }

    /// `L_d` and the observation and reward MSEs.
    fn model_update(&mut self) -> Result<Option<(f64, f64, f64)>> {
        let (Some(model), Some(opt)) = (&self.nets.model, self.model_opt.as_mut()) else {
            return Ok(None);
        };
        let batch = self.transitions.sample(self.cfg.inference_batch, &mut self.rng);
        if batch.is_empty() {
            return Ok(None);
        }
        let (obs_mse, reward_mse) = prediction_errors(model, &self.store, &batch)?;
        let mut g = Graph::new(&self.store);
        let loss = model.inference_loss(&mut g, &batch)?;
        let value = g.value(loss).data()[0].as_f64();
        let grads = g.backward(loss)?;
        drop(g);
        self.store.zero_grads();
        self.store.accumulate(&grads);
        self.store.clip_grad_norm(&model.params(), S::of(self.cfg.grad_clip));
        opt.step(&mut self.store);
        Ok(Some((value, obs_mse, reward_mse)))
    }

    /// Copies live parameters into the targets when due.
    pub fn maybe_sync_targets(&mut self) -> Result<bool> {
        self.targets.maybe_sync(&self.store, self.episodes as usize)
    }

    /// Collect, train and evaluate until `t_max` environment steps. `on_row`
    /// sees one row per train step and per evaluation; the last row always
    /// carries an evaluation.
    pub fn run<E, F>(&mut self, envs: &mut [E], eval_envs: &mut [E], mut on_row: F) -> Result<()>
    where
        E: MultiAgentEnv,
        F: FnMut(&Self, &MetricsRow) -> Result<()>,
    {
        let mut next_eval = 0u64;
        while self.env_steps < self.cfg.t_max {
            let epsilon = self.epsilon();
            self.collect(envs)?;
            let train = self.train_step()?;
            self.maybe_sync_targets()?;
            let finished = self.env_steps >= self.cfg.t_max;
            let eval = if self.env_steps >= next_eval || finished {
                while next_eval <= self.env_steps {
                    next_eval += self.cfg.eval_interval;
                }
                Some(self.evaluate(eval_envs, self.cfg.eval_episodes)?)
            } else {
                None
            };
            if train.is_some() || eval.is_some() {
                let row = MetricsRow {
                    step: self.env_steps,
                    episodes: self.episodes,
                    train_steps: self.train_steps,
                    epsilon,
                    train,
                    eval,
                };
                on_row(self, &row)?;
            }
        }
        Ok(())
    }
}
