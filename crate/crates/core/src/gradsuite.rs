//! Finite-difference check of every trainable network at random `f64`
//! parameter points.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::intrinsic::{IntrinsicConfig, VariationalNets};
use crate::mixer::{MixerConfig, MixingNet};
use crate::numerics::{grad_check, GradCheckConfig, GradCheckReport, Graph, ParamStore, Tensor, Var};
use crate::window::{AgentNetwork, WindowConfig, WindowInput};
use crate::worldmodel::{InferenceNet, InferenceRecord, WorldModelConfig};

const OBS: usize = 4;
const ACTIONS: usize = 3;
const AGENTS: usize = 2;
const ROWS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    pub network: &'static str,
    pub report: GradCheckReport,
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("non-empty")
}

/// Scalar loss `Σ w ⊙ x` with fixed random weights, so every output coordinate
/// contributes a distinct gradient.
fn probe(g: &mut Graph<'_, f64>, x: Var, w: &Tensor<f64>) -> Result<Var> {
    let wv = g.constant(w.clone());
    let p = g.mul(wv, x)?;
    Ok(g.sum(p))
}

/// Runs the check for every network family; each entry covers only the
/// parameters of that family.
pub fn gradient_suite(seed: u64, cfg: &GradCheckConfig) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let wcfg = WindowConfig {
        embed_dim: 5,
        hidden_dim: 4,
        n_window: 3,
        n_heads: 2,
        head_dim: 2,
        ..WindowConfig::new(OBS, ACTIONS, AGENTS)
    };
    let mut store = ParamStore::<f64>::new();
    let agent = AgentNetwork::new(&mut store, wcfg.clone(), &mut rng)?;
    let span = wcfg.span();
    let input_dim = wcfg.input_dim();
    let mut window = WindowInput::empty(ROWS, input_dim, span);
    for p in 0..span {
        window.steps[p] = random_tensor(&mut rng, ROWS, input_dim);
        // the first row starts mid-window so padding is exercised
        window.masks[p] = (0..ROWS).map(|r| r != 0 || p >= 2).collect();
    }
    let x_traj = [random_tensor(&mut rng, ROWS, input_dim), random_tensor(&mut rng, ROWS, input_dim)];
    let ids = [0, 1, 1];
    let wq = random_tensor(&mut rng, ROWS, ACTIONS);
    let wz = random_tensor(&mut rng, ROWS, wcfg.z_dim());
    let agent_loss = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let mut h = g.constant(Tensor::zeros(&[ROWS, wcfg.hidden_dim]));
        for x in &x_traj {
            let xv = g.constant(x.clone());
            h = agent.trajectory_step(g, xv, h)?;
        }
        let sub = agent.subtask(g, h, &window)?;
        let q = agent.q_values(g, h, sub.z, &ids)?;
        let lq = probe(g, q, &wq)?;
        let lz = probe(g, sub.z, &wz)?;
        g.add(lq, lz)
    };
    for (network, prefix) in [
        ("segment GRU", "agent.seg"),
        ("trajectory GRU", "agent.traj"),
        ("attention fusion", "agent.attn"),
        ("agent Q head", "agent.q"),
    ] {
        let ids = store.ids_with_prefix(prefix);
        out.push(SuiteEntry {
            network,
            report: grad_check(&store, &ids, agent_loss, cfg)?,
        });
    }

    let mut store = ParamStore::<f64>::new();
    let z_dim = 3;
    let var = VariationalNets::new(
        &mut store,
        IntrinsicConfig {
            hidden_dim: 5,
            ..Default::default()
        },
        OBS,
        z_dim,
        AGENTS,
        ACTIONS,
        &mut rng,
    )?;
    let o = random_tensor(&mut rng, ROWS, OBS);
    let z = random_tensor(&mut rng, ROWS, z_dim);
    let var_loss = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let (ov, zv) = (g.constant(o.clone()), g.constant(z.clone()));
        let outs = var.forward(g, ov, zv)?;
        var.variational_loss(g, outs, &[0, 1, 0], &[2, 0, 1], None)
    };
    for (network, prefix) in [("trajectory classifier", "var.traj"), ("action classifier", "var.act")] {
        let ids = store.ids_with_prefix(prefix);
        out.push(SuiteEntry {
            network,
            report: grad_check(&store, &ids, var_loss, cfg)?,
        });
    }

    let mut store = ParamStore::<f64>::new();
    let model = InferenceNet::new(
        &mut store,
        WorldModelConfig {
            embed_dim: 5,
            hidden_dim: 4,
            ..Default::default()
        },
        OBS,
        ACTIONS,
        &mut rng,
    )?;
    let records: Vec<InferenceRecord> = (0..2)
        .map(|_| {
            let mut obs = || (0..AGENTS).map(|_| (0..OBS).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).collect();
            let (observations, next_observations) = (obs(), obs());
            InferenceRecord {
                observations,
                next_observations,
                actions: (0..AGENTS).map(|_| rng.gen_range(0..ACTIONS)).collect(),
                reward: rng.gen_range(-1.0..1.0),
            }
        })
        .collect();
    let model_loss = |g: &mut Graph<'_, f64>| model.inference_loss(g, &records);
    for (network, prefix) in [
        ("inference encoder", "model.encoder"),
        ("observation decoder", "model.obs"),
        ("reward decoder", "model.reward"),
    ] {
        let ids = store.ids_with_prefix(prefix);
        out.push(SuiteEntry {
            network,
            report: grad_check(&store, &ids, model_loss, cfg)?,
        });
    }

    let mut store = ParamStore::<f64>::new();
    let mcfg = MixerConfig {
        mix_dim: 4,
        hyper_hidden: 5,
        ..MixerConfig::new(AGENTS, 3, 2)
    };
    let mixer = MixingNet::new(&mut store, mcfg.clone(), &mut rng)?;
    let qs = random_tensor(&mut rng, ROWS, AGENTS);
    let state = random_tensor(&mut rng, ROWS, mcfg.state_dim);
    let zs = random_tensor(&mut rng, ROWS, AGENTS * mcfg.z_dim);
    let wm = random_tensor(&mut rng, ROWS, 1);
    let mix_loss = |g: &mut Graph<'_, f64>| -> Result<Var> {
        let (q, s, zv) = (g.constant(qs.clone()), g.constant(state.clone()), g.constant(zs.clone()));
        let total = mixer.mix(g, q, s, zv)?;
        probe(g, total, &wm)
    };
    out.push(SuiteEntry {
        network: "mixing hypernetworks",
        report: grad_check(&store, &mixer.params(), mix_loss, cfg)?,
    });
    Ok(out)
}
