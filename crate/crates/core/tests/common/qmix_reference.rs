//! Minimal recurrent QMIX written with plain `f64` loops: one-window subtask
//! encoder, agent Q head with agent id, hypernetwork mixer, one-step TD
//! target, finite-difference gradients, global-norm clipping and RMSProp.
//! Parameters are looked up by name so the reference shares nothing with the
//! library beyond the stored values and the episode data.
#![allow(dead_code)]

use std::collections::BTreeMap;

use smaug_core::trainer::EpisodeBatch;

pub type Params = BTreeMap<String, Vec<f64>>;

#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub obs: usize,
    pub actions: usize,
    pub agents: usize,
    pub embed: usize,
    pub hidden: usize,
    pub z: usize,
    pub state: usize,
    pub mix: usize,
    pub hyper: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct Hyper {
    pub gamma: f64,
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub clip: f64,
}

fn w<'a>(p: &'a Params, name: &str) -> &'a [f64] {
    p.get(name).unwrap_or_else(|| panic!("missing parameter {name}"))
}

fn affine(p: &Params, name: &str, x: &[f64], out: usize) -> Vec<f64> {
    let (wt, b) = (w(p, &format!("{name}.weight")), w(p, &format!("{name}.bias")));
    (0..out)
        .map(|o| b[o] + x.iter().enumerate().map(|(i, v)| wt[o * x.len() + i] * v).sum::<f64>())
        .collect()
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru(p: &Params, name: &str, x: &[f64], h: &[f64]) -> Vec<f64> {
    let hd = h.len();
    let (wi, wh) = (w(p, &format!("{name}.w_ih")), w(p, &format!("{name}.w_hh")));
    let (bi, bh) = (w(p, &format!("{name}.b_ih")), w(p, &format!("{name}.b_hh")));
    let lin = |wm: &[f64], b: &[f64], v: &[f64], row: usize| b[row] + v.iter().enumerate().map(|(i, a)| wm[row * v.len() + i] * a).sum::<f64>();
    (0..hd)
        .map(|j| {
            let r = sig(lin(wi, bi, x, j) + lin(wh, bh, h, j));
            let u = sig(lin(wi, bi, x, hd + j) + lin(wh, bh, h, hd + j));
            let n = (lin(wi, bi, x, 2 * hd + j) + r * lin(wh, bh, h, 2 * hd + j)).tanh();
            (1.0 - u) * n + u * h[j]
        })
        .collect()
}

fn input(ep: &EpisodeBatch, t: usize, i: usize, d: &Dims) -> Vec<f64> {
    let mut x: Vec<f64> = ep.obs(t, i).iter().map(|&v| v as f64).collect();
    let mut onehot = vec![0.0; d.actions];
    if t > 0 {
        onehot[ep.action(t - 1, i)] = 1.0;
    }
    x.extend(onehot);
    x
}

/// Per slot and agent: Q values and subtask vector.
fn agent_outputs(p: &Params, d: &Dims, ep: &EpisodeBatch) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<Vec<f64>>>) {
    let mut qs = vec![Vec::new(); ep.len + 1];
    let mut zs = vec![Vec::new(); ep.len + 1];
    for i in 0..d.agents {
        let mut h = vec![0.0; d.hidden];
        for t in 0..=ep.len {
            let x = input(ep, t, i, d);
            h = gru(p, "agent.traj.gru", &relu(affine(p, "agent.traj.fc", &x, d.embed)), &h);
            // the single window covers the previous and the current step
            let mut s = vec![0.0; d.hidden];
            if t > 0 {
                let prev = input(ep, t - 1, i, d);
                s = gru(p, "agent.seg.gru", &relu(affine(p, "agent.seg.fc", &prev, d.embed)), &s);
            }
            s = gru(p, "agent.seg.gru", &relu(affine(p, "agent.seg.fc", &x, d.embed)), &s);
            // one key: attention weight 1, output is the value projection
            let wv = w(p, "agent.attn.w_v");
            let z: Vec<f64> = (0..d.z).map(|o| (0..d.hidden).map(|k| wv[o * d.hidden + k] * s[k]).sum()).collect();
            let mut head_in = h.clone();
            head_in.extend(&z);
            head_in.extend((0..d.agents).map(|a| if a == i { 1.0 } else { 0.0 }));
            qs[t].push(affine(p, "agent.q", &head_in, d.actions));
            zs[t].push(z);
        }
    }
    (qs, zs)
}

fn q_total(p: &Params, d: &Dims, q: &[f64], state: &[f64], zs: &[Vec<f64>]) -> f64 {
    let mut x = state.to_vec();
    for z in zs {
        x.extend(z);
    }
    let two = |a: &str, b: &str, out: usize| affine(p, b, &relu(affine(p, a, &x, d.hyper)), out);
    let w1: Vec<f64> = two("mixer.w1.hidden", "mixer.w1.out", d.agents * d.mix).iter().map(|v| v.abs()).collect();
    let b1 = affine(p, "mixer.b1", &x, d.mix);
    let w2: Vec<f64> = two("mixer.w2.hidden", "mixer.w2.out", d.mix).iter().map(|v| v.abs()).collect();
    let b2 = affine(p, "mixer.b2.out", &relu(affine(p, "mixer.b2.hidden", &x, d.mix)), 1)[0];
    let mut out = b2;
    for j in 0..d.mix {
        let pre = b1[j] + (0..d.agents).map(|i| q[i] * w1[i * d.mix + j]).sum::<f64>();
        let hj = if pre > 0.0 { pre } else { pre.exp_m1() };
        out += w2[j] * hj;
    }
    out
}

fn state(ep: &EpisodeBatch, t: usize) -> Vec<f64> {
    ep.state(t).iter().map(|&v| v as f64).collect()
}

/// TD targets of every transition, computed once from the frozen copy.
fn targets(p: &Params, d: &Dims, eps: &[&EpisodeBatch], gamma: f64) -> Vec<Vec<f64>> {
    eps.iter()
        .map(|ep| {
            let (qs, zs) = agent_outputs(p, d, ep);
            (0..ep.len)
                .map(|t| {
                    let boot = if ep.terminated[t] {
                        0.0
                    } else {
                        let best: Vec<f64> = (0..d.agents)
                            .map(|i| {
                                qs[t + 1][i]
                                    .iter()
                                    .zip(ep.available(t + 1, i))
                                    .filter(|(_, &a)| a)
                                    .map(|(v, _)| *v)
                                    .fold(f64::NEG_INFINITY, f64::max)
                            })
                            .collect();
                        q_total(p, d, &best, &state(ep, t + 1), &zs[t + 1])
                    };
                    ep.rewards[t] + gamma * boot
                })
                .collect()
        })
        .collect()
}

fn loss(p: &Params, d: &Dims, eps: &[&EpisodeBatch], y: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut count = 0.0;
    for (ep, ys) in eps.iter().zip(y) {
        let (qs, zs) = agent_outputs(p, d, ep);
        for t in 0..ep.len {
            let chosen: Vec<f64> = (0..d.agents).map(|i| qs[t][i][ep.action(t, i)]).collect();
            let diff = q_total(p, d, &chosen, &state(ep, t), &zs[t]) - ys[t];
            total += diff * diff;
            count += 1.0;
        }
    }
    total / count
}

/// Parameters after one update of `trained` (all other entries unchanged).
pub fn reference_update(params: &Params, trained: &[String], d: &Dims, h: &Hyper, eps: &[&EpisodeBatch]) -> (Params, f64) {
    let y = targets(params, d, eps, h.gamma);
    let base = loss(params, d, eps, &y);
    let step = 1e-6;
    let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut p = params.clone();
    for name in trained {
        let n = p[name].len();
        let mut g = vec![0.0; n];
        for k in 0..n {
            let orig = p[name][k];
            p.get_mut(name).unwrap()[k] = orig + step;
            let up = loss(&p, d, eps, &y);
            p.get_mut(name).unwrap()[k] = orig - step;
            let down = loss(&p, d, eps, &y);
            p.get_mut(name).unwrap()[k] = orig;
            g[k] = (up - down) / (2.0 * step);
        }
        grads.insert(name.clone(), g);
    }
    let norm = grads.values().flatten().map(|g| g * g).sum::<f64>().sqrt();
    let scale = if norm > h.clip { h.clip / norm } else { 1.0 };
    for (name, g) in &grads {
        for (v, gi) in p.get_mut(name).unwrap().iter_mut().zip(g) {
            let gi = gi * scale;
            let sq = (1.0 - h.alpha) * gi * gi;
            *v -= h.lr * gi / (sq.sqrt() + h.eps);
        }
    }
    (p, base)
}
