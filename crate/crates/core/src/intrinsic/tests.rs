use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{log_softmax_row, RmsPropState};

const OBS: usize = 4;
const Z: usize = 3;

fn nets(n_classes: usize, n_actions: usize, seed: u64) -> (ParamStore<f64>, VariationalNets) {
    let mut store = ParamStore::new();
    let cfg = IntrinsicConfig {
        hidden_dim: 8,
        ..Default::default()
    };
    let n = VariationalNets::new(&mut store, cfg, OBS, Z, n_classes, n_actions, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, n)
}

fn random_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(vec![rows, cols], (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn make_uniform(store: &mut ParamStore<f64>, c: &Classifier) {
    for id in c.out.params() {
        store.value_mut(id).fill(0.0);
    }
}

#[test]
fn uniform_classifiers_give_log_ratio() {
    let (mut store, n) = nets(3, 5, 0);
    make_uniform(&mut store, &n.trajectory);
    make_uniform(&mut store, &n.action);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (o, z) = (random_rows(&mut rng, 2, OBS), random_rows(&mut rng, 2, Z));
    let r = n.intrinsic_reward(&store, &o, &z, &[0, 2], &[4, 1]).unwrap();
    let expected = (1.0f64 / 3.0).ln() - (1.0f64 / 5.0).ln();
    assert!((expected - 0.5108).abs() < 1e-4);
    assert!(r.iter().all(|v| (v - expected).abs() < 1e-12));
}

#[test]
fn zero_betas_disable_the_reward() {
    assert_eq!(intrinsic_reward(-3.0, -0.2, 0.0, 0.0), 0.0);
    assert_eq!(intrinsic_reward(f64::NEG_INFINITY, -1e300, 0.0, 0.0), 0.0);
}

#[test]
fn reward_matches_separate_log_softmax() {
    let (store, n) = nets(3, 5, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (o, z) = (random_rows(&mut rng, 3, OBS), random_rows(&mut rng, 3, Z));
    let (labels, actions) = ([0, 1, 2], [3, 0, 4]);
    let got = n.intrinsic_reward(&store, &o, &z, &labels, &actions).unwrap();
    let two_layer = |c: &Classifier, x: &[f64]| -> Vec<f64> {
        let h: Vec<f64> = crate::numerics::dense_forward(&store, &c.hidden, &Tensor::new(vec![1, x.len()], x.to_vec()).unwrap())
            .unwrap()
            .data()
            .iter()
            .map(|v| v.max(0.0))
            .collect();
        let logits = crate::numerics::dense_forward(&store, &c.out, &Tensor::new(vec![1, h.len()], h).unwrap()).unwrap();
        log_softmax_row(logits.data())
    };
    for r in 0..3 {
        let mut oz = o.row(r).to_vec();
        oz.extend_from_slice(z.row(r));
        let lt = two_layer(&n.trajectory, &oz)[labels[r]];
        let la = two_layer(&n.action, o.row(r))[actions[r]];
        assert!((got[r] - (lt - la)).abs() < 1e-12);
    }
}

#[test]
fn labels_are_agent_indices_and_balanced() {
    assert_eq!(trajectory_class_label(0), 0);
    assert_eq!(trajectory_class_label(4), 4);
    let n_agents = 3;
    let mut counts = vec![0; n_agents];
    for _episode in 0..32 {
        for _t in 0..10 {
            for i in 0..n_agents {
                counts[trajectory_class_label(i)] += 1;
            }
        }
    }
    assert!(counts.iter().all(|&c| c == 320));
}

fn loss_value(store: &ParamStore<f64>, n: &VariationalNets, o: &Tensor<f64>, z: &Tensor<f64>, labels: &[usize], actions: &[usize]) -> f64 {
    let mut g = Graph::new(store);
    let ov = g.constant(o.clone());
    let zv = g.constant(z.clone());
    let out = n.forward(&mut g, ov, zv).unwrap();
    let l = n.variational_loss(&mut g, out, labels, actions, None).unwrap();
    g.value(l).data()[0]
}

#[test]
fn cross_entropy_edge_cases() {
    let (mut store, n) = nets(4, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (o, z) = (random_rows(&mut rng, 5, OBS), random_rows(&mut rng, 5, Z));
    make_uniform(&mut store, &n.trajectory);
    make_uniform(&mut store, &n.action);
    let l = loss_value(&store, &n, &o, &z, &[0, 1, 2, 3, 0], &[0, 1, 0, 1, 1]);
    assert!((l - (4.0f64.ln() + 2.0f64.ln())).abs() < 1e-12);

    // a confident correct trajectory classifier leaves only the action term
    store.value_mut(n.trajectory.out.bias).data_mut()[2] = 60.0;
    let l = loss_value(&store, &n, &o, &z, &[2; 5], &[0, 1, 0, 1, 1]);
    assert!((l - 2.0f64.ln()).abs() < 1e-12);
}

#[test]
fn loss_decreases_when_overfitting_a_small_batch() {
    let (mut store, n) = nets(3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (o, z) = (random_rows(&mut rng, 16, OBS), random_rows(&mut rng, 16, Z));
    let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let actions: Vec<usize> = (0..16).map(|_| rng.gen_range(0..4)).collect();
    let mut opt = RmsPropState::new(&store, n.params(), 5e-3, 0.99, 1e-5);
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let grads = {
            let mut g = Graph::new(&store);
            let ov = g.constant(o.clone());
            let zv = g.constant(z.clone());
            let out = n.forward(&mut g, ov, zv).unwrap();
            let l = n.variational_loss(&mut g, out, &labels, &actions, None).unwrap();
            let v = g.value(l).data()[0];
            assert!(v < prev, "loss rose from {prev} to {v}");
            prev = v;
            g.backward(l).unwrap()
        };
        store.accumulate(&grads);
        opt.step(&mut store);
    }
}

#[test]
fn weighted_rows_are_ignored_when_zero() {
    let (store, n) = nets(3, 4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (o, z) = (random_rows(&mut rng, 4, OBS), random_rows(&mut rng, 4, Z));
    let full = loss_value(&store, &n, &Tensor::new(vec![2, OBS], o.data()[..2 * OBS].to_vec()).unwrap(), &Tensor::new(vec![2, Z], z.data()[..2 * Z].to_vec()).unwrap(), &[0, 1], &[2, 3]);
    let mut g = Graph::new(&store);
    let (ov, zv) = (g.constant(o.clone()), g.constant(z.clone()));
    let out = n.forward(&mut g, ov, zv).unwrap();
    let l = n
        .variational_loss(&mut g, out, &[0, 1, 2, 0], &[2, 3, 1, 1], Some(&[1.0, 1.0, 0.0, 0.0]))
        .unwrap();
    assert!((g.value(l).data()[0] - full).abs() < 1e-12);
}

// ---- tabular audit ----

fn uniform_joint(dims: [usize; 4]) -> TabularJoint {
    let n: usize = dims.iter().product();
    TabularJoint::new(dims, vec![1.0 / n as f64; n]).unwrap()
}

#[test]
fn independent_uniform_variables() {
    let a = mi_bound_audit(&uniform_joint([2, 3, 4, 5])).unwrap();
    assert!(a.i_tau_z.abs() < 1e-12);
    assert!(a.i_o_tau_given_z.abs() < 1e-12);
    assert!(a.i_a_tau_given_o.abs() < 1e-12);
    assert!((a.h_a_given_o_tau - 5.0f64.ln()).abs() < 1e-12);
    assert!((a.rhs - (-(3.0f64.ln()) + 5.0f64.ln())).abs() < 1e-12);
    assert!(a.holds());
}

#[test]
fn trajectory_determined_by_subtask() {
    // τ = z mod 2 with z uniform on 4 values
    let dims = [2, 2, 4, 3];
    let mut probs = vec![0.0; 48];
    for o in 0..2 {
        for z in 0..4 {
            for a in 0..3 {
                let t = z % 2;
                probs[((o * 2 + t) * 4 + z) * 3 + a] = 1.0 / 24.0;
            }
        }
    }
    let a = mi_bound_audit(&TabularJoint::new(dims, probs).unwrap()).unwrap();
    assert!((a.i_tau_z - a.h_tau).abs() < 1e-12);
    assert!((a.h_tau - 2.0f64.ln()).abs() < 1e-12);
    assert!(a.holds());
}

fn dirichlet_joint(rng: &mut ChaCha8Rng) -> TabularJoint {
    let dims = [rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6), rng.gen_range(1..=6)];
    let n: usize = dims.iter().product();
    // occasional exact zeros exercise the 0·log 0 convention
    let raw: Vec<f64> = (0..n)
        .map(|_| if rng.gen_bool(0.1) { 0.0 } else { -rng.gen_range(f64::MIN_POSITIVE..1.0).ln() })
        .collect();
    let total: f64 = raw.iter().sum();
    let probs = if total > 0.0 {
        raw.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    };
    TabularJoint::new(dims, probs).unwrap()
}

#[test]
fn random_tables_satisfy_the_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..100 {
        let a = mi_bound_audit(&dirichlet_joint(&mut rng)).unwrap();
        assert!(a.holds(), "{a:?}");
        assert!((a.slack() - a.h_tau).abs() < 1e-9);
    }
}

#[test]
fn audit_rejects_unnormalised_tables() {
    let t = TabularJoint {
        dims: [1, 1, 1, 2],
        probs: vec![0.5, 0.6],
    };
    assert!(matches!(mi_bound_audit(&t), Err(Error::Argument(_))));
    assert!(TabularJoint::new([1, 1, 1, 2], vec![1.5, -0.5]).is_err());
    assert!(TabularJoint::new([1, 1, 1, 2], vec![1.0]).is_err());
}

proptest! {
    #[test]
    fn reward_is_bounded(lt in -1e6f64..0.0, la in -1e6f64..0.0, b1 in 0.0f64..3.0, b2 in 0.0f64..3.0) {
        let r = intrinsic_reward(lt, la, b1, b2);
        prop_assert!(r.abs() <= (b1 + b2) * LOG_PROB_FLOOR.abs() + 1e-9);
    }

    #[test]
    fn loss_ignores_row_order(seed in 0u64..100_000) {
        let (store, n) = nets(3, 4, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (o, z) = (random_rows(&mut rng, 6, OBS), random_rows(&mut rng, 6, Z));
        let labels: Vec<usize> = (0..6).map(|_| rng.gen_range(0..3)).collect();
        let actions: Vec<usize> = (0..6).map(|_| rng.gen_range(0..4)).collect();
        let base = loss_value(&store, &n, &o, &z, &labels, &actions);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let pick = |t: &Tensor<f64>| {
            Tensor::new(t.shape().to_vec(), perm.iter().flat_map(|&r| t.row(r).to_vec()).collect()).unwrap()
        };
        let pl: Vec<usize> = perm.iter().map(|&r| labels[r]).collect();
        let pa: Vec<usize> = perm.iter().map(|&r| actions[r]).collect();
        let permuted = loss_value(&store, &n, &pick(&o), &pick(&z), &pl, &pa);
        prop_assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn random_audits_hold(seed in 0u64..1_000_000) {
        let a = mi_bound_audit(&dirichlet_joint(&mut ChaCha8Rng::seed_from_u64(seed))).unwrap();
        prop_assert!(a.holds());
    }
}
