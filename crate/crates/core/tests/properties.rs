use gafm_core::baselines::{max_norm_perturb, max_norm_sigmas};
use gafm_core::metrics::{
    auc, auc_bound, leak_auc, mean_attack, median_attack, sym_kl_hist, tvd_hist, GradientAudit,
    DEFAULT_BINS, DEFAULT_KL_SMOOTHING,
};
use gafm_core::nn::{clip_weights, l2_norm, l2_normalize, Activation, MlpParams};
use gafm_core::protocol::{aggregate, distribute_grad, Aggregator, CutMessageUp};
use gafm_core::trainer::{cut_gradient, draw_randomized_response};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 1.0;
                wins += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Scores on a coarse grid so ties are common, with both classes present.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=200).prop_flat_map(|n| {
        (
            prop::collection::vec((0i32..20).prop_map(|k| k as f64 / 4.0), n),
            prop::collection::vec(0u8..=1, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

proptest! {
    #[test]
    fn auc_equals_pairwise_count((scores, labels) in scored_labels()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn leak_auc_is_flip_symmetric((scores, labels) in scored_labels()) {
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
        let a = leak_auc(&scores, &labels).unwrap();
        prop_assert!(a >= 0.5);
        prop_assert!((a - leak_auc(&scores, &flipped).unwrap()).abs() < 1e-12);
        prop_assert!((a - leak_auc(&negated, &labels).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn tvd_is_a_distance(pos in prop::collection::vec(-5.0f64..5.0, 1..100),
                         neg in prop::collection::vec(-5.0f64..5.0, 1..100)) {
        let t = tvd_hist(&pos, &neg, DEFAULT_BINS).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!(tvd_hist(&pos, &pos, DEFAULT_BINS).unwrap().abs() < 1e-12);
        let shifted: Vec<f64> = pos.iter().map(|v| v + 20.0).collect();
        prop_assert!((tvd_hist(&shifted, &neg, DEFAULT_BINS).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clipping_is_bounded_and_idempotent(seed in 0u64..1000, c in 0.01f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = [(8, Activation::leaky_relu()), (1, Activation::Identity)];
        let mut net = MlpParams::<f64>::glorot(3, &layers, &mut rng).unwrap();
        clip_weights(&mut net, c);
        prop_assert!(net.flat().iter().all(|v| v.abs() <= c));
        let once = net.clone();
        clip_weights(&mut net, c);
        prop_assert_eq!(net, once);
    }

    #[test]
    fn normalization_ignores_positive_scale(v in prop::collection::vec(-1e3f64..1e3, 1..50),
                                            alpha in 1e-3f64..1e3) {
        prop_assume!(l2_norm(&v) > 1e-6);
        let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        for (a, b) in l2_normalize(&v).iter().zip(l2_normalize(&scaled)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        prop_assert!((l2_norm(&l2_normalize(&v)) - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn combined_gradient_norm_and_scale(g in prop::collection::vec(-1.0f64..1.0, 2..40),
                                        p_seed in 0u64..1000, gamma in 0.0f64..3.0, a in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(p_seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let p: Vec<f64> = g.iter().map(|_| normal.sample(&mut rng)).collect();
        let out = cut_gradient(&g, &p, gamma);
        prop_assert!(l2_norm(&out) <= 1.0 + gamma + 1e-12);
        let gs: Vec<f64> = g.iter().map(|x| a * x).collect();
        let ps: Vec<f64> = p.iter().map(|x| x / a).collect();
        for (x, y) in out.iter().zip(cut_gradient(&gs, &ps, gamma)) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn center_attacks_ignore_affine_maps(g in prop::collection::vec(-3.0f64..3.0, 4..80),
                                         seed in 0u64..100, a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let labels: Vec<u8> = (0..g.len()).map(|i| ((i as u64 * 7 + seed) % 3 == 0) as u8).collect();
        prop_assume!(labels.contains(&0) && labels.contains(&1));
        let moved: Vec<f64> = g.iter().map(|x| a * x + b).collect();
        let base = GradientAudit::new(&g, &labels).unwrap();
        let shifted = GradientAudit::new(&moved, &labels).unwrap();
        // margins scale by `a`, so every ranking and hence every AUC is unchanged
        for (x, y) in mean_attack(&base).iter().zip(mean_attack(&shifted)) {
            prop_assert!((a * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
        for (x, y) in median_attack(&base).iter().zip(median_attack(&shifted)) {
            prop_assert!((a * x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}

#[test]
fn auc_bound_endpoints_and_monotone() {
    assert_eq!(auc_bound(0.0f64).unwrap(), 0.5);
    assert!((auc_bound(1.0f64).unwrap() - 0.875).abs() < 1e-15);
    let grid: Vec<f64> = (0..100).map(|k| 3.99 * k as f64 / 99.0).collect();
    for w in grid.windows(2) {
        assert!(auc_bound(w[1]).unwrap() > auc_bound(w[0]).unwrap());
    }
    assert!(auc_bound(4.0f64).is_err());
    assert!(auc_bound(-0.1f64).is_err());
}

#[test]
fn randomized_response_range_and_mean() {
    let n = 100_000;
    for delta in [0.0, 0.05, 0.3, 0.5] {
        let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let r = draw_randomized_response(&labels, delta, &mut rng).unwrap();
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for (&l, &v) in labels.iter().zip(&r.values) {
            if l == 1 {
                assert!((0.5..=0.5 + delta).contains(&v));
                pos.push(v);
            } else {
                assert!((0.5 - delta..=0.5).contains(&v));
                neg.push(v);
            }
        }
        // u ~ U(0, delta): sd = delta / sqrt(12)
        let se = delta / 12f64.sqrt() / (pos.len() as f64).sqrt();
        let m_pos = pos.iter().sum::<f64>() / pos.len() as f64;
        let m_neg = neg.iter().sum::<f64>() / neg.len() as f64;
        assert!((m_pos - (0.5 + delta / 2.0)).abs() <= 3.0 * se + 1e-15, "delta {delta}: {m_pos}");
        assert!((m_neg - (0.5 - delta / 2.0)).abs() <= 3.0 * se + 1e-15, "delta {delta}: {m_neg}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(draw_randomized_response(&[1, 0], 0.6, &mut rng).is_err());
}

#[test]
fn max_norm_matches_largest_expected_square() {
    let g = [0.3, -1.2, 0.05, 2.0, -0.7];
    let gmax2 = 4.0;
    let sigmas = max_norm_sigmas(&g);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let draws = 200_000;
    let mut sum = [0.0; 5];
    let mut sum_sq = [0.0; 5];
    for _ in 0..draws {
        for (j, v) in max_norm_perturb(&g, &mut rng).iter().enumerate() {
            sum[j] += v * v;
            sum_sq[j] += v.powi(4);
        }
    }
    for j in 0..g.len() {
        let m = sum[j] / draws as f64;
        let var = sum_sq[j] / draws as f64 - m * m;
        let se = (var / draws as f64).sqrt();
        assert!((m - gmax2).abs() <= 3.0 * se + 1e-12, "entry {j}: {m} (sigma {})", sigmas[j]);
    }
}

#[test]
fn histogram_kl_of_unit_gaussians() {
    // N(0,1) vs N(1,1): each directed KL is 1/2, so the symmetric sum is 1.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let a: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..200_000).map(|_| normal.sample(&mut rng) + 1.0).collect();
    let kl = sym_kl_hist(&a, &b, DEFAULT_BINS, DEFAULT_KL_SMOOTHING).unwrap();
    assert!((kl - 1.0).abs() <= 0.1, "{kl}");
}

#[test]
fn single_party_average_equals_identity() {
    let up = vec![CutMessageUp {
        party: 0,
        indices: vec![3, 1, 4],
        values: vec![0.2, 0.7, 0.5],
    }];
    assert_eq!(
        aggregate(&up, Aggregator::Identity).unwrap(),
        aggregate(&up, Aggregator::Average).unwrap()
    );
    let grad = [0.1, -0.2, 0.3];
    let a = distribute_grad(&[3, 1, 4], &grad, Aggregator::Identity, 1).unwrap();
    let b = distribute_grad(&[3, 1, 4], &grad, Aggregator::Average, 1).unwrap();
    assert_eq!(a, b);
}
