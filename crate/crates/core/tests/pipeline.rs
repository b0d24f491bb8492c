//! Cross-module flows: point cloud to labels via a nearest-neighbour graph,
//! and planted-signal recovery scored by support metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use proxsplit::graph::build_knn_graph;
use proxsplit::metrics;
use proxsplit::problems::{
    build_eeg_problem, build_labeling_problem, line_search_lambda, synth_eeg, GammaMode,
    LabelingInstance,
};
use proxsplit::solver::{solve, SolveConfig, SplitMode, StoppingRule};

/// Three planted point clusters, noisy one-hot predictions, smoothing on a
/// nearest-neighbour graph: the regularized argmax labeling beats the raw one
/// and the line search picks a nonzero penalty.
#[test]
fn knn_labeling_pipeline_improves_noisy_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let channels = 3;
    let per_cluster = 16;
    let centers = [[0.0, 0.0], [4.0, 0.0], [2.0, 3.5]];
    let mut points = Vec::new();
    let mut gt = Vec::new();
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_cluster {
            points.push(vec![
                center[0] + rng.gen_range(-0.8..0.8),
                center[1] + rng.gen_range(-0.8..0.8),
            ]);
            gt.push(label);
        }
    }
    let n = points.len();
    let graph = build_knn_graph(&points, 6).unwrap().with_constant_tv_weight(0.4);

    // Corrupt a third of the predictions.
    let mut q = vec![0.0f64; n * channels];
    for v in 0..n {
        let observed = if rng.gen_bool(0.33) {
            (gt[v] + rng.gen_range(1..channels)) % channels
        } else {
            gt[v]
        };
        for k in 0..channels {
            q[v * channels + k] = if k == observed { 0.85 } else { 0.15 / (channels - 1) as f64 };
        }
    }
    let instance = LabelingInstance {
        graph,
        q,
        channels,
        beta: 0.1,
        ground_truth: Some(gt.clone()),
        train_subset: (0..n).step_by(3).collect(),
    };

    let all: Vec<usize> = (0..n).collect();
    let raw_labels = metrics::argmax_labels(&instance.q, channels);
    let raw_f1 = metrics::avg_f1(&raw_labels, &gt, &all, channels).unwrap();

    let config = SolveConfig::new(StoppingRule::MaxEvol(1e-6), 50_000);
    let (best_lambda, scores) =
        line_search_lambda(&[0.0, 0.2, 0.4], &instance, &config, 0.9).unwrap();
    assert!(best_lambda > 0.0, "line search scores: {scores:?}");

    let problem = build_labeling_problem(
        &instance.with_constant_tv(best_lambda),
        SplitMode::Pfdr,
        0.9,
    )
    .unwrap();
    let out = solve(&problem, &config).unwrap();
    let smoothed = metrics::argmax_labels(&out.x, channels);
    let smoothed_f1 = metrics::avg_f1(&smoothed, &gt, &all, channels).unwrap();
    assert!(
        smoothed_f1 > raw_f1,
        "regularization should improve the labeling: {smoothed_f1} vs {raw_f1}"
    );
    // Entropy flags the blurriest predictions; all entropies are bounded by
    // the uniform row's.
    let entropy = metrics::entropy_uncertainty(&instance.q, channels);
    let cap = (channels as f64).ln();
    assert!(entropy.iter().all(|&e| e >= 0.0 && e <= cap + 1e-12));
}

/// Planted-support recovery on the inverse-problem family: the thresholded
/// support from the 2-means rule matches the planted one exactly at desk
/// scale.
#[test]
fn planted_support_recovery_via_2means() {
    let inst = synth_eeg::<f64>(88, 40, 25, 8, 0.02).unwrap();
    let problem = build_eeg_problem(&inst, SplitMode::Pfdr, GammaMode::Strict, 0.9).unwrap();
    let out = solve(&problem, &SolveConfig::new(StoppingRule::RelEvol(1e-10), 200_000)).unwrap();
    let gt = inst.ground_truth.as_ref().unwrap();
    let support = metrics::approx_support_2means(&out.x).unwrap();
    let masked = metrics::mask_to_support(&out.x, &support);
    let dice_raw = metrics::dice_score(&out.x, gt);
    let dice_masked = metrics::dice_score(&masked, gt);
    assert!(
        dice_masked >= dice_raw - 1e-12,
        "thresholding should not hurt: {dice_masked} vs {dice_raw}"
    );
    assert!(dice_masked > 0.9, "recovered dice {dice_masked}");
}
