use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smaug::diagnostics::{adjusted_mutual_info, alignment_score, kmeans, trace_csv};
use smaug_core::trainer::StepTrace;

fn labels(line: &str) -> Vec<usize> {
    line.split(',').map(|v| v.trim().parse().unwrap()).collect()
}

// Reference values from scikit-learn's adjusted_mutual_info_score with its
// default arithmetic normalisation.
#[test]
fn ami_matches_reference_implementation() {
    let cases: [(&[usize], &[usize], f64); 6] = [
        (&[0, 0, 1, 1, 2, 2], &[0, 0, 1, 2, 2, 2], 0.5023607027202738),
        (&[0, 0, 0, 1, 1, 1, 2, 2, 2, 3], &[1, 1, 0, 0, 2, 2, 2, 3, 3, 0], 0.266269356401016),
        (&[0, 1, 0, 1, 0, 1, 0, 1], &[0, 0, 1, 1, 0, 0, 1, 1], -0.12974472642510582),
        (&[0, 0, 0, 0], &[0, 1, 2, 3], 0.0),
        (&[0, 1, 2, 3], &[0, 1, 2, 3], 1.0),
        (&[0, 0, 1, 1], &[0, 0, 0, 0], 0.0),
    ];
    for (t, p, expected) in cases {
        let got = adjusted_mutual_info(t, p);
        assert!((got - expected).abs() < 1e-9, "{t:?} {p:?}: {got} vs {expected}");
    }
    let text = include_str!("fixtures/ami_labels.txt");
    let mut lines = text.lines();
    let (t, p) = (labels(lines.next().unwrap()), labels(lines.next().unwrap()));
    let got = adjusted_mutual_info(&t, &p);
    assert!((got - 0.3719219438122055).abs() < 1e-9, "{got}");
}

#[test]
fn ami_is_invariant_to_relabelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let n = rng.gen_range(2..60);
        let t: Vec<usize> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let p: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let renamed: Vec<usize> = p.iter().map(|&l| 10 + 2 * (2 - l)).collect();
        let base = adjusted_mutual_info(&t, &p);
        assert!((adjusted_mutual_info(&t, &renamed) - base).abs() < 1e-12);
        assert!((adjusted_mutual_info(&p, &t) - base).abs() < 1e-12);
        assert!(base <= 1.0 + 1e-12);
        let perfect: Vec<usize> = t.iter().map(|&l| 3 - l).collect();
        assert!((adjusted_mutual_info(&t, &perfect) - 1.0).abs() < 1e-12 || t.iter().all(|&l| l == t[0]));
    }
}

#[test]
fn kmeans_recovers_separated_clusters() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]];
    let mut points = Vec::new();
    let mut truth = Vec::new();
    for i in 0..90 {
        let c = i % 3;
        points.push(vec![centers[c][0] + rng.gen_range(-1.0..1.0), centers[c][1] + rng.gen_range(-1.0..1.0)]);
        truth.push(c);
    }
    let found = kmeans(&points, 3, 4, 0);
    assert_eq!(adjusted_mutual_info(&truth, &found), 1.0);
    assert_eq!(kmeans(&points, 3, 4, 0), found, "seeded clustering is deterministic");
}

fn trace(t: usize, agent: usize, goal: Option<usize>, z: Vec<f64>) -> StepTrace {
    StepTrace {
        instance: 0,
        t,
        agent,
        ground_truth: goal,
        attention: vec![0.25, 0.75],
        z,
        action: 0,
    }
}

#[test]
fn subtask_vectors_that_encode_the_goal_align_perfectly() {
    let traces: Vec<StepTrace> = (0..60)
        .map(|i| {
            let g = (i / 5) % 3;
            let mut z = vec![0.0; 3];
            z[g] = 1.0;
            trace(i, i % 2, Some(g), z)
        })
        .collect();
    assert_eq!(alignment_score(&traces, 3, 0), Some(1.0));
    let unlabelled: Vec<StepTrace> = traces.iter().cloned().map(|mut t| {
        t.ground_truth = None;
        t
    }).collect();
    assert_eq!(alignment_score(&unlabelled, 3, 0), None);
}

#[test]
fn trace_csv_has_one_column_per_weight_and_coordinate() {
    let traces = vec![trace(0, 1, Some(2), vec![0.5, -1.0, 2.0]), trace(1, 0, None, vec![0.0; 3])];
    let csv = trace_csv(&traces, 2, 3);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,agent,goal_id,alpha_1,alpha_2,z_0,z_1,z_2");
    assert_eq!(lines[1], "0,1,2,0.25,0.75,0.5,-1,2");
    assert_eq!(lines[2], "1,0,,0.25,0.75,0,0,0");
}
