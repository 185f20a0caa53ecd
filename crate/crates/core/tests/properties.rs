#![allow(clippy::needless_range_loop)]

mod common;

use cpe::cmm::{cmm, identify_worst, worst_k_cmm, WorstK};
use cpe::container::{decode, encode};
use cpe::ensemble::{ensemble_scores, select_templates, template_weights};
use cpe::matcher::{
    empirical_h, predict, similarity_tensor, HMatrix, SimilarityMatrix, SimilarityTensor,
    VariantMode,
};
use cpe::metrics::{
    class_accuracy, geometric_mean, harmonic_mean, worst_at_k, EvaluationReport, REPORT_KS,
};
use cpe::EmbeddingMatrix;
use proptest::prelude::*;

fn matrix_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>)> {
    (1usize..6, 1usize..9).prop_flat_map(|(r, d)| {
        (
            Just(r),
            Just(d),
            prop::collection::vec(-1e6f32..1e6f32, r * d),
        )
    })
}

fn scores_strategy() -> impl Strategy<Value = (usize, usize, Vec<f32>, Vec<usize>)> {
    (1usize..12, 2usize..6).prop_flat_map(|(n, c)| {
        (
            Just(n),
            Just(c),
            prop::collection::vec(-1.0f32..1.0, n * c),
            prop::collection::vec(0..c, n),
        )
    })
}

proptest! {
    #[test]
    fn container_round_trip_is_bit_exact((r, d, v) in matrix_strategy()) {
        let m = EmbeddingMatrix::new(r, d, v, false).unwrap();
        let bytes = encode(&m);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn normalization_is_idempotent((r, d, v) in matrix_strategy()) {
        prop_assume!(v.chunks(d).all(|row| row.iter().any(|&x| x.abs() > 1e-3)));
        let once = EmbeddingMatrix::new(r, d, v, false).unwrap().normalize_rows().unwrap();
        let twice = once.normalize_rows().unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
        for row in once.iter_rows() {
            let norm = common::dot(row, row).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn h_is_invariant_to_image_order((n, c, v, labels) in scores_strategy(), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut common::rng(seed));
        let s = SimilarityMatrix::new(n, c, v.clone()).unwrap();
        let rows: Vec<Vec<f32>> = perm.iter().map(|&i| v[i * c..(i + 1) * c].to_vec()).collect();
        let permuted = SimilarityMatrix::from_rows(&rows).unwrap();
        let plabels: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let a = empirical_h(&s, &labels).unwrap();
        let b = empirical_h(&permuted, &plabels).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
        for i in 0..c {
            for j in 0..c {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn argmax_ignores_shift_and_positive_scale(
        row in prop::collection::vec(-1.0f64..1.0, 1..10),
        shift in -5.0f64..5.0,
        scale in 0.1f64..10.0,
    ) {
        let p = predict(&row).unwrap();
        let moved: Vec<f64> = row.iter().map(|x| x * scale + shift).collect();
        // only compare when the winner is not within rounding of a rival
        let gap = row.iter().enumerate().filter(|&(j, _)| j != p).map(|(_, x)| row[p] - x).fold(f64::INFINITY, f64::min);
        prop_assume!(gap > 1e-9);
        prop_assert_eq!(predict(&moved).unwrap(), p);
    }

    #[test]
    fn raising_the_diagonal_raises_the_margin(
        n in 2usize..7,
        seed in any::<u64>(),
        i_raw in any::<usize>(),
        delta in 0.0f64..1.0,
    ) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let i = i_raw % n;
        let before = cmm(&HMatrix::new(rows.clone(), vec![1; n]).unwrap()).unwrap();
        let mut raised = rows;
        raised[i][i] += delta;
        let after = cmm(&HMatrix::new(raised, vec![1; n]).unwrap()).unwrap();
        prop_assert!(after[i] >= before[i]);
        for j in 0..n {
            if j != i {
                prop_assert_eq!(after[j], before[j]);
            }
        }
    }

    #[test]
    fn worst_k_helpers_agree_with_sorting(v in prop::collection::vec(-1.0f64..1.0, 1..12), k_raw in any::<usize>()) {
        let k = 1 + k_raw % v.len();
        let w = WorstK::compute(&v, k).unwrap();
        prop_assert_eq!(w.value, worst_k_cmm(&v, k).unwrap());
        prop_assert_eq!(w.value, w.fallback);
        prop_assert!(!w.degenerate);
        prop_assert_eq!(identify_worst(&v, k).unwrap(), common::sort_worst(&v, k));
        prop_assert!(w.value <= v.iter().sum::<f64>() / v.len() as f64 + 1e-12);
    }

    #[test]
    fn worst_at_k_is_the_minimum_subset_mean(v in prop::collection::vec(0.0f64..=1.0, 1..9), k_raw in any::<usize>()) {
        let k = 1 + k_raw % v.len();
        prop_assert_eq!(worst_at_k(&v, k).unwrap(), common::brute_force_worst_k(&v, k));
        prop_assert_eq!(worst_k_cmm(&v, k).unwrap(), common::brute_force_worst_k(&v, k));
    }

    #[test]
    fn hm_le_gm_le_mean(acc in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let hm = harmonic_mean(&acc).unwrap();
        let gm = geometric_mean(&acc).unwrap();
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let tol = 1e-12;
        prop_assert!(hm <= gm + tol);
        prop_assert!(gm <= mean + tol);
        let worst = acc.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(worst_at_k(&acc, 1).unwrap() == worst);
        prop_assert!((worst_at_k(&acc, acc.len()).unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn metrics_ignore_sample_order(labels in prop::collection::vec(0usize..5, 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut r = common::rng(seed);
        let preds: Vec<usize> = labels.iter().map(|_| r.random_range(0..5)).collect();
        let mut perm: Vec<usize> = (0..labels.len()).collect();
        perm.shuffle(&mut r);
        let pl: Vec<usize> = perm.iter().map(|&i| labels[i]).collect();
        let pp: Vec<usize> = perm.iter().map(|&i| preds[i]).collect();
        let a = EvaluationReport::new(&preds, &labels, 5, &REPORT_KS).unwrap();
        let b = EvaluationReport::new(&pp, &pl, 5, &REPORT_KS).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn per_class_accuracy_matches_direct_count(labels in prop::collection::vec(0usize..4, 1..40), seed in any::<u64>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let preds: Vec<usize> = labels.iter().map(|_| r.random_range(0..4)).collect();
        let acc = class_accuracy(&preds, &labels, 4).unwrap();
        for c in 0..4 {
            let support = labels.iter().filter(|&&y| y == c).count();
            let hit = (0..labels.len()).filter(|&i| labels[i] == c && preds[i] == c).count();
            let expected = (support > 0).then(|| hit as f64 / support as f64);
            prop_assert_eq!(acc.accuracy[c], expected);
        }
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-50.0f64..50.0, 1..20), t in 0.05f64..5.0) {
        let w = template_weights(&v, t).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] > v[j] {
                    prop_assert!(w[i] >= w[j]);
                }
            }
        }
    }

    #[test]
    fn selection_keeps_at_least_half(v in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let w = template_weights(&v, 1.0).unwrap();
        let s = select_templates(&w).unwrap();
        let kept = s.mask.iter().filter(|&&b| b).count();
        prop_assert!(kept >= w.len().div_ceil(2));
        for (i, &b) in s.mask.iter().enumerate() {
            prop_assert_eq!(b, w[i] >= s.threshold);
        }
    }

    #[test]
    fn predictions_ignore_weight_rescaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let (m, n, c) = (3, 6, 4);
        let tensor = SimilarityTensor::new((0..m).map(|_| {
            let v: Vec<f32> = (0..n * c).map(|_| r.random_range(-1.0f32..1.0)).collect();
            SimilarityMatrix::new(n, c, v).unwrap()
        }).collect()).unwrap();
        let w: Vec<f64> = (0..m).map(|_| r.random_range(0.01..1.0)).collect();
        let mask = vec![true, r.random_bool(0.5), true];
        let a = ensemble_scores(&tensor, &w, &mask).unwrap();
        let scaled: Vec<f64> = w.iter().map(|x| x * scale).collect();
        let b = ensemble_scores(&tensor, &scaled, &mask).unwrap();
        for x in 0..n {
            let row = a.row(x);
            let p = a.predictions[x];
            let gap = (0..c).filter(|&j| j != p).map(|j| row[p] - row[j]).fold(f64::INFINITY, f64::min);
            if gap > 1e-9 {
                prop_assert_eq!(b.predictions[x], p);
            }
        }
    }

    #[test]
    fn augmented_scores_use_exactly_the_requested_rows(seed in any::<u64>(), include_bare in any::<bool>()) {
        use rand::Rng;
        let mut r = common::rng(seed);
        let bank = common::random_bank(&mut r, 2, 4, 6, 3);
        let rows = common::random_unit_rows(&mut r, 5, 6);
        let images = EmbeddingMatrix::from_rows(&rows, true).unwrap();
        let described: Vec<Vec<bool>> = (0..2).map(|_| (0..4).map(|_| r.random_bool(0.5)).collect()).collect();
        let modes: Vec<Vec<VariantMode>> = described.iter().map(|d| d.iter().map(|&on| if on {
            VariantMode::Described { include_bare }
        } else {
            VariantMode::Bare
        }).collect()).collect();
        let tensor = similarity_tensor(&images, &bank, &modes).unwrap();
        for t in 0..2 {
            let reference = common::reference_similarity(&images, &bank, t, &described[t], include_bare);
            for x in 0..5 {
                for c in 0..4 {
                    prop_assert!((tensor.template(t).get(x, c) as f64 - reference[x][c]).abs() < 1e-6);
                }
            }
        }
    }
}
