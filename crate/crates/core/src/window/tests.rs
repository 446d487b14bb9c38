use alloc::vec;
use alloc::vec::Vec;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numerics::{gru_step, Tensor};

fn small_cfg(n_window: usize) -> WindowConfig {
    WindowConfig {
        embed_dim: 5,
        hidden_dim: 6,
        n_window,
        n_heads: 2,
        head_dim: 3,
        ..WindowConfig::new(3, 4, 2)
    }
}

fn build(cfg: WindowConfig, seed: u64) -> (ParamStore<f64>, AgentNetwork) {
    let mut store = ParamStore::new();
    let net = AgentNetwork::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    (store, net)
}

fn random_history(rng: &mut ChaCha8Rng, len: usize, width: usize) -> Vec<Vec<f32>> {
    (0..len)
        .map(|_| (0..width).map(|_| rng.gen_range(-1.0f32..1.0)).collect())
        .collect()
}

// Plain f64 re-implementation of the layers, read straight from the store.

fn dense(store: &ParamStore<f64>, layer: &DenseLayer, x: &[f64]) -> Vec<f64> {
    let w = store.value(layer.weight).data();
    let b = store.value(layer.bias).data();
    (0..layer.out_dim)
        .map(|o| b[o] + (0..layer.in_dim).map(|i| w[o * layer.in_dim + i] * x[i]).sum::<f64>())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru(store: &ParamStore<f64>, cell: &GruCell, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = cell.hidden_dim;
    let w_ih = store.value(cell.w_ih).data();
    let w_hh = store.value(cell.w_hh).data();
    let b_ih = store.value(cell.b_ih).data();
    let b_hh = store.value(cell.b_hh).data();
    let mv = |w: &[f64], b: &[f64], v: &[f64], row: usize| {
        b[row] + v.iter().enumerate().map(|(i, vi)| w[row * v.len() + i] * vi).sum::<f64>()
    };
    (0..hd)
        .map(|j| {
            let r = sigmoid(mv(w_ih, b_ih, x, j) + mv(w_hh, b_hh, h, j));
            let u = sigmoid(mv(w_ih, b_ih, x, hd + j) + mv(w_hh, b_hh, h, hd + j));
            let n = (mv(w_ih, b_ih, x, 2 * hd + j) + r * mv(w_hh, b_hh, h, 2 * hd + j)).tanh();
            (1.0 - u) * n + u * h[j]
        })
        .collect()
}

fn encode_real_steps(store: &ParamStore<f64>, enc: &SegmentEncoder, steps: &[Vec<f32>]) -> Vec<f64> {
    let mut h = vec![0.0; enc.gru.hidden_dim];
    for x in steps {
        let x: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        let e: Vec<f64> = dense(store, &enc.fc, &x).into_iter().map(|v| v.max(0.0)).collect();
        h = gru(store, &enc.gru, &e, &h);
    }
    h
}

fn project(store: &ParamStore<f64>, w: ParamId, x: &[f64]) -> Vec<f64> {
    let w = store.value(w).data();
    let n = x.len();
    (0..w.len() / n)
        .map(|o| (0..n).map(|i| w[o * n + i] * x[i]).sum())
        .collect()
}

/// Direct attention formula: per head softmax over `λ q·k`, weighted values.
fn attention(store: &ParamStore<f64>, att: &MultiHeadAttention, query: &[f64], reps: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let q = project(store, att.w_q, query);
    let ks: Vec<Vec<f64>> = reps.iter().map(|r| project(store, att.w_k, r)).collect();
    let vs: Vec<Vec<f64>> = reps.iter().map(|r| project(store, att.w_v, r)).collect();
    let hd = att.head_dim;
    let mut z = Vec::new();
    let mut alphas = Vec::new();
    for h in 0..att.n_heads {
        let span = h * hd..(h + 1) * hd;
        let scores: Vec<f64> = ks
            .iter()
            .map(|k| att.temperature * span.clone().map(|i| q[i] * k[i]).sum::<f64>())
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let tot: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|v| v / tot).collect();
        for i in span.clone() {
            z.push(a.iter().zip(&vs).map(|(ai, v)| ai * v[i]).sum());
        }
        alphas.push(a);
    }
    (z, alphas)
}

fn encode_segment(store: &ParamStore<f64>, net: &AgentNetwork, seg: &TrajectorySegment) -> Vec<f64> {
    let window = WindowInput::from_segment(seg, net.cfg.span()).unwrap();
    let mut g = Graph::new(store);
    let reps = net.segment_encodings(&mut g, &window).unwrap();
    g.value(reps[seg.window_size - 1]).to_f64_vec()
}

#[test]
fn segments_at_episode_start() {
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(0), 1, 7);
    let segs = extract_segments(&h, 0, 5).unwrap();
    assert_eq!(segs.len(), 5);
    for (i, s) in segs.iter().enumerate() {
        let k = i + 1;
        assert_eq!(s.window_size, k);
        assert_eq!(s.steps.len(), k + 1);
        assert_eq!(s.padding(), k);
        assert_eq!(s.steps[k], h[0]);
        assert!(s.steps[..k].iter().flatten().all(|&v| v == 0.0));
    }
}

#[test]
fn segments_at_steady_state() {
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(1), 11, 4);
    for s in extract_segments(&h, 10, 5).unwrap() {
        let k = s.window_size;
        assert_eq!(s.padding(), 0);
        assert_eq!(s.steps, h[10 - k..=10].to_vec());
    }
}

#[test]
fn segments_partially_padded() {
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(2), 3, 4);
    let pads: Vec<usize> = extract_segments(&h, 2, 5).unwrap().iter().map(|s| s.padding()).collect();
    assert_eq!(pads, vec![0, 0, 1, 2, 3]);
}

#[test]
fn segments_reject_out_of_range_step() {
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(2), 3, 4);
    assert!(matches!(extract_segments(&h, 3, 5), Err(Error::Argument(_))));
    assert!(matches!(extract_segments(&[], 0, 5), Err(Error::Argument(_))));
}

#[test]
fn fully_padded_segment_encodes_to_zero() {
    let (store, net) = build(small_cfg(3), 0);
    let seg = TrajectorySegment {
        window_size: 3,
        steps: vec![vec![0.0; 7]; 4],
        mask: vec![false; 4],
    };
    assert!(encode_segment(&store, &net, &seg).iter().all(|&v| v == 0.0));
}

#[test]
fn unit_segment_is_one_gru_step() {
    let (store, net) = build(small_cfg(3), 1);
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(3), 1, 7);
    let seg = &extract_segments(&h, 0, 3).unwrap()[0];
    let enc = &net.segment_encoders[0];
    let x = Tensor::<f64>::from_f32(&[1, 7], &h[0]).unwrap();
    let e = crate::numerics::dense_forward(&store, &enc.fc, &x).unwrap();
    let e = Tensor::new(vec![1, 5], e.data().iter().map(|v| v.max(0.0)).collect()).unwrap();
    let expected = gru_step(&store, &enc.gru, &e, &Tensor::zeros(&[1, 6])).unwrap();
    let got = encode_segment(&store, &net, seg);
    for (a, b) in got.iter().zip(expected.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn segment_matches_unrolled_oracle() {
    let (store, net) = build(small_cfg(3), 2);
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(4), 9, 7);
    let seg = &extract_segments(&h, 8, 3).unwrap()[2];
    let expected = encode_real_steps(&store, &net.segment_encoders[0], &seg.steps);
    for (a, b) in encode_segment(&store, &net, seg).iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn padding_equals_history_starting_at_first_real_step() {
    let (store, net) = build(small_cfg(5), 3);
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(5), 3, 7);
    for seg in extract_segments(&h, 2, 5).unwrap() {
        let real: Vec<Vec<f32>> = seg
            .steps
            .iter()
            .zip(&seg.mask)
            .filter(|(_, &m)| m)
            .map(|(x, _)| x.clone())
            .collect();
        let expected = encode_real_steps(&store, &net.segment_encoders[0], &real);
        for (a, b) in encode_segment(&store, &net, &seg).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12, "window {}", seg.window_size);
        }
    }
}

#[test]
fn per_window_encoders_are_distinct() {
    let cfg = WindowConfig {
        per_window_encoders: true,
        ..small_cfg(3)
    };
    let (store, net) = build(cfg, 4);
    assert_eq!(net.segment_encoders.len(), 3);
    let h = random_history(&mut ChaCha8Rng::seed_from_u64(6), 6, 7);
    for seg in extract_segments(&h, 5, 3).unwrap() {
        let enc = &net.segment_encoders[seg.window_size - 1];
        let expected = encode_real_steps(&store, enc, &seg.steps);
        for (a, b) in encode_segment(&store, &net, &seg).iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn fuse(store: &ParamStore<f64>, net: &AgentNetwork, query: &[f64], reps: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut g = Graph::new(store);
    let q = g.constant(Tensor::new(vec![1, query.len()], query.to_vec()).unwrap());
    let reps: Vec<Var> = reps
        .iter()
        .map(|r| g.constant(Tensor::new(vec![1, r.len()], r.clone()).unwrap()))
        .collect();
    let (z, w) = net.fuse(&mut g, q, &reps).unwrap();
    (g.value(z).to_f64_vec(), w.iter().map(|&w| g.value(w).to_f64_vec()).collect())
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

#[test]
fn identical_window_encodings_give_uniform_weights() {
    let (store, net) = build(small_cfg(4), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rep = random_vec(&mut rng, 6);
    let (z, weights) = fuse(&store, &net, &random_vec(&mut rng, 6), &vec![rep.clone(); 4]);
    for w in weights {
        assert!(w.iter().all(|a| (a - 0.25).abs() < 1e-12));
    }
    let v = project(&store, net.attention.w_v, &rep);
    for (a, b) in z.iter().zip(&v) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn single_window_passes_value_projection() {
    let (store, net) = build(small_cfg(1), 6);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let rep = random_vec(&mut rng, 6);
    let (z, weights) = fuse(&store, &net, &random_vec(&mut rng, 6), &[rep.clone()]);
    assert!(weights.iter().all(|w| w == &vec![1.0]));
    let v = project(&store, net.attention.w_v, &rep);
    for (a, b) in z.iter().zip(&v) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn fusion_matches_direct_formula() {
    let (store, net) = build(small_cfg(3), 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let query = random_vec(&mut rng, 6);
    let reps: Vec<Vec<f64>> = (0..3).map(|_| random_vec(&mut rng, 6)).collect();
    let (z, weights) = fuse(&store, &net, &query, &reps);
    let (ez, ew) = attention(&store, &net.attention, &query, &reps);
    for (a, b) in z.iter().zip(&ez) {
        assert!((a - b).abs() < 1e-12);
    }
    for (w, e) in weights.iter().zip(&ew) {
        for (a, b) in w.iter().zip(e) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn greedy_respects_mask_and_ties() {
    assert_eq!(greedy_action(&[5.0f32, -1.0, 9.0], &[false, true, false]), Some(1));
    assert_eq!(greedy_action(&[0.0f32; 4], &[false, true, true, true]), Some(1));
    assert_eq!(greedy_action(&[1.0f32, 3.0, 3.0], &[true; 3]), Some(1));
    assert_eq!(greedy_action(&[1.0f32], &[false]), None);
    assert_eq!(
        masked_q_values(&[1.0f32, 2.0], &[true, false]),
        vec![1.0, f64::NEG_INFINITY]
    );
}

#[test]
fn zero_q_head_gives_zero_values() {
    let (mut store, net) = build(small_cfg(3), 1);
    for id in net.q_head.params() {
        store.value_mut(id).fill(0.0);
    }
    let state = AgentRecurrentState::<f64>::new(&net.cfg, 2);
    let out = net.evaluate(&store, &state.h_traj, &state.window, &[0, 1]).unwrap();
    assert!(out.q.data().iter().all(|&v| v == 0.0));
    assert_eq!(greedy_action(out.q.row(1), &[false, true, true, true]), Some(1));
}

fn run_agent(store: &ParamStore<f64>, net: &AgentNetwork, xs: &[Vec<f32>], ids: &[usize]) -> AgentOutputs<f64> {
    let rows = ids.len();
    let mut state = AgentRecurrentState::new(&net.cfg, rows);
    for x in xs {
        let data: Vec<f32> = (0..rows).flat_map(|_| x.iter().copied()).collect();
        net.observe(store, &mut state, Tensor::from_f32(&[rows, x.len()], &data).unwrap()).unwrap();
    }
    net.evaluate(store, &state.h_traj, &state.window, ids).unwrap()
}

#[test]
fn q_values_regression_fixture() {
    let (store, net) = build(small_cfg(3), 0);
    let xs = random_history(&mut ChaCha8Rng::seed_from_u64(0), 4, 7);
    let out = run_agent(&store, &net, &xs, &[1]);
    let q = out.q.to_f64_vec();
    for (a, b) in q.iter().zip(&Q_FIXTURE) {
        assert!((a - b).abs() < 1e-9, "{q:?}");
    }
}

const Q_FIXTURE: [f64; 4] = [
    -0.06016073295607563,
    0.3540216986884783,
    0.21901404474384017,
    -0.19114066207613972,
];

#[test]
fn q_values_match_composed_oracle() {
    let (store, net) = build(small_cfg(3), 0);
    let xs = random_history(&mut ChaCha8Rng::seed_from_u64(0), 4, 7);
    let h_traj = encode_real_steps(&store, &net.trajectory, &xs);
    let reps: Vec<Vec<f64>> = extract_segments(&xs, 3, 3)
        .unwrap()
        .iter()
        .map(|s| encode_real_steps(&store, &net.segment_encoders[0], &s.steps))
        .collect();
    let (z, _) = attention(&store, &net.attention, &h_traj, &reps);
    let mut input = h_traj.clone();
    input.extend(&z);
    input.extend([0.0, 1.0]);
    let expected = dense(&store, &net.q_head, &input);
    let got = run_agent(&store, &net, &xs, &[1]).q.to_f64_vec();
    for (a, b) in got.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn agents_with_same_inputs_and_id_agree() {
    let (store, net) = build(small_cfg(3), 9);
    let xs = random_history(&mut ChaCha8Rng::seed_from_u64(10), 5, 7);
    let out = run_agent(&store, &net, &xs, &[1, 1, 0]);
    assert_eq!(out.q.row(0), out.q.row(1));
    assert_eq!(out.representation.z.row(0), out.representation.z.row(2));
    assert_ne!(out.q.row(0), out.q.row(2));
}

#[test]
fn batched_rows_match_single_rows() {
    let (store, net) = build(small_cfg(3), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // rows start at different times, so their windows carry different padding
    let histories: Vec<Vec<Vec<f32>>> = (0..3).map(|r| random_history(&mut rng, 2 + 2 * r, 7)).collect();
    let singles: Vec<AgentOutputs<f64>> = histories.iter().map(|h| run_agent(&store, &net, h, &[0])).collect();

    let span = net.cfg.span();
    let mut window = WindowInput::<f64>::empty(3, 7, span);
    let mut h_rows = Vec::new();
    for (r, h) in histories.iter().enumerate() {
        let mut st = AgentRecurrentState::new(&net.cfg, 1);
        for x in h {
            net.observe(&store, &mut st, Tensor::from_f32(&[1, 7], x).unwrap()).unwrap();
        }
        h_rows.extend_from_slice(st.h_traj.data());
        for p in 0..span {
            window.masks[p][r] = st.window.masks[p][0];
            window.steps[p].data_mut()[r * 7..(r + 1) * 7].copy_from_slice(st.window.steps[p].data());
        }
    }
    let h = Tensor::new(vec![3, 6], h_rows).unwrap();
    let out = net.evaluate(&store, &h, &window, &[0, 0, 0]).unwrap();
    for (r, s) in singles.iter().enumerate() {
        for (a, b) in out.q.row(r).iter().zip(s.q.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in out.representation.z.row(r).iter().zip(s.representation.z.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn disabled_window_yields_zero_subtask() {
    let cfg = WindowConfig {
        disable_window: true,
        ..small_cfg(3)
    };
    let (store, net) = build(cfg, 0);
    let xs = random_history(&mut ChaCha8Rng::seed_from_u64(1), 3, 7);
    let out = run_agent(&store, &net, &xs, &[0]);
    assert!(out.representation.z.data().iter().all(|&v| v == 0.0));
    assert!(out.representation.attention_weights.is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn attention_weights_sum_to_one(seed in 0u64..1_000_000, n_window in 1usize..=6) {
        let (store, net) = build(small_cfg(n_window), seed);
        let xs = random_history(&mut ChaCha8Rng::seed_from_u64(seed ^ 1), 1 + (seed % 8) as usize, 7);
        let out = run_agent(&store, &net, &xs, &[0]);
        for w in &out.representation.attention_weights {
            prop_assert_eq!(w.cols(), n_window);
            prop_assert!((w.data().iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(w.data().iter().all(|&a| a > 0.0));
        }
    }

    #[test]
    fn swapping_windows_swaps_weights(seed in 0u64..1_000_000, i in 0usize..4, j in 0usize..4) {
        let (store, net) = build(small_cfg(4), seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let query = random_vec(&mut rng, 6);
        let reps: Vec<Vec<f64>> = (0..4).map(|_| random_vec(&mut rng, 6)).collect();
        let mut swapped = reps.clone();
        swapped.swap(i, j);
        let (z, w) = fuse(&store, &net, &query, &reps);
        let (zs, ws) = fuse(&store, &net, &query, &swapped);
        for (a, b) in w.iter().zip(&ws) {
            let mut a = a.clone();
            a.swap(i, j);
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
        for (x, y) in z.iter().zip(&zs) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn greedy_invariant_to_constant_shift(
        q in proptest::collection::vec(-10.0f64..10.0, 1..8),
        shift in -100.0f64..100.0,
        mask_bits in 1u8..=255,
    ) {
        let avail: Vec<bool> = (0..q.len()).map(|a| mask_bits >> (a % 8) & 1 == 1).collect();
        prop_assume!(avail.iter().any(|&m| m));
        let shifted: Vec<f64> = q.iter().map(|v| v + shift).collect();
        let a = greedy_action(&q, &avail).unwrap();
        let b = greedy_action(&shifted, &avail).unwrap();
        // a shift can only reorder values that were within rounding of each other
        prop_assert!(a == b || (q[a] - q[b]).abs() < 1e-9);
    }
}
