//! Subtask-recognition diagnostics: k-means over subtask vectors and the
//! adjusted mutual information between clusters and ground-truth goals.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::function::factorial::ln_factorial;

use smaug_core::trainer::StepTrace;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Lloyd's algorithm from a k-means++ start; the best of `restarts` runs by
/// inertia. Returns one label per point.
pub fn kmeans(points: &[Vec<f64>], k: usize, restarts: usize, seed: u64) -> Vec<usize> {
    if points.is_empty() || k == 0 {
        return vec![0; points.len()];
    }
    let k = k.min(points.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..restarts.max(1) {
        let (inertia, labels) = lloyd(points, k, &mut rng);
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, labels));
        }
    }
    best.map(|(_, l)| l).unwrap_or_default()
}

fn lloyd(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<usize>) {
    let mut centers = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            d2.iter()
                .position(|&d| {
                    u -= d;
                    u <= 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.gen_range(0..points.len())
        };
        centers.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..300 {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let nearest = (0..k)
                .min_by(|&a, &b| sq_dist(p, &centers[a]).total_cmp(&sq_dist(p, &centers[b])))
                .expect("k > 0");
            changed |= *l != nearest;
            *l = nearest;
        }
        if !changed {
            break;
        }
        let dim = points[0].len();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&l, p) in labels.iter().zip(points) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let inertia = labels.iter().zip(points).map(|(&l, p)| sq_dist(p, &centers[l])).sum();
    (inertia, labels)
}

fn counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for &l in labels {
        *m.entry(l).or_insert(0) += 1;
    }
    m
}

fn entropy(counts: &BTreeMap<usize, usize>, n: f64) -> f64 {
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Adjusted mutual information with arithmetic-mean normalisation, using the
/// exact expected mutual information under the hypergeometric model.
pub fn adjusted_mutual_info(truth: &[usize], pred: &[usize]) -> f64 {
    assert_eq!(truth.len(), pred.len(), "label vectors differ in length");
    let n = truth.len();
    let (a, b) = (counts(truth), counts(pred));
    // identical trivial partitions carry no information to adjust for
    if n == 0 || (a.len() == 1 && b.len() == 1) {
        return 1.0;
    }
    let nf = n as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&t, &p) in truth.iter().zip(pred) {
        *joint.entry((t, p)).or_insert(0) += 1;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(t, p), &c)| {
            let c = c as f64;
            c / nf * (nf * c / (a[&t] as f64 * b[&p] as f64)).ln()
        })
        .sum();
    let ln_n = ln_factorial(n as u64);
    let mut emi = 0.0;
    for &ai in a.values() {
        for &bj in b.values() {
            let lo = (ai + bj).saturating_sub(n).max(1);
            let hi = ai.min(bj);
            let fixed = ln_factorial(ai as u64) + ln_factorial(bj as u64) + ln_factorial((n - ai) as u64)
                + ln_factorial((n - bj) as u64)
                - ln_n;
            for nij in lo..=hi {
                let x = nij as f64;
                let log_p = fixed
                    - ln_factorial(nij as u64)
                    - ln_factorial((ai - nij) as u64)
                    - ln_factorial((bj - nij) as u64)
                    - ln_factorial((n + nij - ai - bj) as u64);
                emi += x / nf * (nf * x / (ai as f64 * bj as f64)).ln() * log_p.exp();
            }
        }
    }
    let mean_h = 0.5 * (entropy(&a, nf) + entropy(&b, nf));
    let denom = mean_h - emi;
    if denom.abs() < f64::EPSILON {
        return if (mi - emi).abs() < f64::EPSILON { 1.0 } else { 0.0 };
    }
    (mi - emi) / denom
}

/// CSV of per-step traces: `t,agent,goal_id,alpha_1..alpha_k,z_0..z_{d-1}`.
pub fn trace_csv(traces: &[StepTrace], n_window: usize, z_dim: usize) -> String {
    let mut header = vec!["t".to_string(), "agent".into(), "goal_id".into()];
    header.extend((1..=n_window).map(|k| format!("alpha_{k}")));
    header.extend((0..z_dim).map(|i| format!("z_{i}")));
    let mut out = header.join(",");
    out.push('\n');
    for tr in traces {
        let mut cells = vec![
            tr.t.to_string(),
            tr.agent.to_string(),
            tr.ground_truth.map_or_else(String::new, |g| g.to_string()),
        ];
        // a disabled window has no attention weights
        cells.extend((0..n_window).map(|k| tr.attention.get(k).map_or_else(String::new, |a| a.to_string())));
        cells.extend(tr.z.iter().map(|v| v.to_string()));
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Clusters the traces' subtask vectors into `k` groups and scores them
/// against the ground-truth goal ids.
pub fn alignment_score(traces: &[StepTrace], k: usize, seed: u64) -> Option<f64> {
    let labelled: Vec<&StepTrace> = traces.iter().filter(|t| t.ground_truth.is_some()).collect();
    if labelled.is_empty() {
        return None;
    }
    let points: Vec<Vec<f64>> = labelled.iter().map(|t| t.z.clone()).collect();
    let truth: Vec<usize> = labelled.iter().map(|t| t.ground_truth.expect("filtered")).collect();
    let clusters = kmeans(&points, k, 4, seed);
    Some(adjusted_mutual_info(&truth, &clusters))
}
