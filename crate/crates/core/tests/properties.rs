mod common;

use std::sync::Arc;

use proptest::prelude::*;

use spade_core::archive::{read_pyramid, write_pyramid};
use spade_core::evaluation::{connected_components, pro_at_threshold};
use spade_core::retrieval::{mean_distance, ExactSearch, KdTree, NeighborSearch, VectorSet};
use spade_core::scoring::{resize_bilinear, smooth};
use spade_core::types::{FeatureMap, FeaturePyramid};
use spade_core::{classify, roc_auc, AnomalyMap, Grid, GroundTruthMask, ThresholdConfig};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 64,
        ..ProptestConfig::default()
    }
}

/// Scores drawn from a small set so ties are common, with both labels present.
fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    (2usize..60)
        .prop_flat_map(|n| (prop::collection::vec(0u8..12, n), prop::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
        .prop_map(|(s, l)| (s.into_iter().map(f64::from).collect(), l))
}

fn grid(max: usize) -> impl Strategy<Value = Grid<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(-50.0f64..50.0, h * w).prop_map(move |v| Grid::new(h, w, v).unwrap())
    })
}

fn vectors(dim: usize) -> impl Strategy<Value = Vec<f32>> {
    // integers keep ties frequent and every distance exactly representable
    (1usize..80).prop_flat_map(move |n| prop::collection::vec((-4i8..4).prop_map(f32::from), n * dim))
}

fn mask(max: usize) -> impl Strategy<Value = Grid<u8>> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop::bool::weighted(0.35), h * w)
            .prop_map(move |v| Grid::new(h, w, v.into_iter().map(u8::from).collect()).unwrap())
    })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn roc_invariant_under_monotone_transform((scores, labels) in scored_labels()) {
        let a = roc_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.3).exp() * 5.0 - 2.0).collect();
        prop_assert_eq!(a, roc_auc(&mapped, &labels).unwrap());
        prop_assert!((a - common::pair_count_auc(&scores, &labels)).abs() < 1e-12);
    }

    #[test]
    fn roc_of_flipped_labels_is_complement((scores, labels) in scored_labels()) {
        let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
        let sum = roc_auc(&scores, &labels).unwrap() + roc_auc(&scores, &flipped).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn knn_mean_distance_grows_with_k(data in vectors(4), q in prop::collection::vec(-4.0f32..4.0, 4)) {
        let rows = Arc::new(VectorSet::new(4, data).unwrap());
        let search = ExactSearch::new(rows.clone());
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=rows.len() {
            let d = mean_distance(&search.knn(&q, k).unwrap());
            prop_assert!(d >= prev);
            prev = d;
        }
    }

    #[test]
    fn knn_scales_with_power_of_two(data in vectors(3), q in prop::collection::vec(-4i8..4, 3), k in 1usize..6) {
        let q: Vec<f32> = q.into_iter().map(f32::from).collect();
        let rows = Arc::new(VectorSet::new(3, data.clone()).unwrap());
        let k = k.min(rows.len());
        let scaled = Arc::new(VectorSet::new(3, data.iter().map(|v| v * 4.0).collect()).unwrap());
        let qs: Vec<f32> = q.iter().map(|v| v * 4.0).collect();
        let a = ExactSearch::new(rows).knn(&q, k).unwrap();
        let b = ExactSearch::new(scaled).knn(&qs, k).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(x.index, y.index);
            prop_assert_eq!(x.dist * 16.0, y.dist);
        }
    }

    #[test]
    fn kd_tree_agrees_with_scan(data in vectors(5), q in prop::collection::vec(-5i8..5, 5), k in 1usize..8) {
        let q: Vec<f32> = q.into_iter().map(f32::from).collect();
        let rows = Arc::new(VectorSet::new(5, data).unwrap());
        let k = k.min(rows.len());
        let exact = ExactSearch::new(rows.clone()).knn(&q, k).unwrap();
        prop_assert_eq!(&exact, &KdTree::build(rows.clone()).knn(&q, k).unwrap());
        let rows: Vec<Vec<f32>> = (0..rows.len()).map(|i| rows.row(i).to_vec()).collect();
        let naive: Vec<(usize, f64)> = exact.iter().map(|n| (n.index, n.dist)).collect();
        prop_assert_eq!(naive, common::naive_knn(&rows, &q, k));
    }

    #[test]
    fn resizing_stays_within_source_range(src in grid(9), oh in 1usize..24, ow in 1usize..24) {
        let (lo, hi) = src.min_max().unwrap();
        let out = resize_bilinear(&src, (oh, ow));
        prop_assert_eq!(out.shape(), (oh, ow));
        for &v in out.as_slice() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn smoothing_stays_within_range(src in grid(12), sigma in 0.3f64..5.0) {
        let (lo, hi) = src.min_max().unwrap();
        for &v in smooth(&src, sigma).as_slice() {
            prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
        }
    }

    #[test]
    fn smoothing_preserves_constants(h in 1usize..12, w in 1usize..12, c in -9.0f64..9.0, sigma in 0.3f64..5.0) {
        let out = smooth(&Grid::filled(h, w, c), sigma);
        for &v in out.as_slice() {
            prop_assert!((v - c).abs() < 1e-12);
        }
    }

    #[test]
    fn archive_round_trips(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u32>()) {
        let values = |n: usize, salt: u32| -> Vec<f32> {
            (0..n).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed ^ salt) as f32 / 1e7).collect()
        };
        let levels = vec![
            FeatureMap::new("a", [c, h * 2, w * 2], 4, values(c * h * w * 4, 1)).unwrap(),
            FeatureMap::new("b", [c + 1, h, w], 8, values((c + 1) * h * w, 2)).unwrap(),
        ];
        let pyramid = FeaturePyramid::new("cls/test/odd name/#1", levels, values(c + 1, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_pyramid(dir.path(), &pyramid).unwrap();
        prop_assert_eq!(read_pyramid(dir.path(), &pyramid.image_id).unwrap(), pyramid);
    }

    #[test]
    fn raising_thresholds_never_flags_more(src in grid(8), tau in -60.0f64..60.0, theta in -60.0f64..60.0, d in 0.0f64..20.0) {
        let map = AnomalyMap { image_id: "x".into(), scores: src, image_score: tau + d / 2.0 };
        let (lo_img, lo_px) = classify(&map, ThresholdConfig { tau, theta });
        let (hi_img, hi_px) = classify(&map, ThresholdConfig { tau: tau + d, theta: theta + d });
        prop_assert!(lo_img >= hi_img);
        for (a, b) in lo_px.as_slice().iter().zip(hi_px.as_slice()) {
            prop_assert!(a >= b);
        }
    }

    #[test]
    fn components_partition_the_foreground(m in mask(20)) {
        let regions = connected_components(&m);
        let mut seen = vec![false; m.as_slice().len()];
        for r in &regions {
            prop_assert!(!r.is_empty());
            for &p in &r.pixels {
                prop_assert!(m.as_slice()[p] > 0 && !seen[p]);
                seen[p] = true;
            }
        }
        for (p, &v) in m.as_slice().iter().enumerate() {
            prop_assert_eq!(v > 0, seen[p]);
        }
        let oracle = common::flood_fill_regions(&m);
        prop_assert_eq!(regions.len(), oracle.len());
    }

    #[test]
    fn pro_and_fpr_fall_as_threshold_rises(
        m in mask(16).prop_filter("has both", |m| m.as_slice().iter().any(|&v| v > 0) && m.as_slice().iter().any(|&v| v == 0)),
        noise in prop::collection::vec(0.0f64..1.0, 256),
        t in 0.0f64..1.5,
        d in 0.0f64..0.5,
    ) {
        let scores = Grid::from_fn(m.height(), m.width(), |y, x| {
            f64::from(m.get(y, x)) * 0.4 + noise[(y * m.width() + x) % noise.len()]
        });
        let maps = [AnomalyMap { image_id: "x".into(), scores, image_score: 0.0 }];
        let masks = [GroundTruthMask::new("x", m).unwrap()];
        let (fpr_lo, pro_lo) = pro_at_threshold(&maps, &masks, t).unwrap();
        let (fpr_hi, pro_hi) = pro_at_threshold(&maps, &masks, t + d).unwrap();
        prop_assert!(fpr_lo >= fpr_hi && pro_lo >= pro_hi);
        let (fpr, pro) = common::direct_pro_point(&maps, &masks, t);
        prop_assert!((fpr - fpr_lo).abs() < 1e-12 && (pro - pro_lo).abs() < 1e-12);
    }
}
