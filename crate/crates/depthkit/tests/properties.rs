//! Randomized invariant checks across the library.

use depthkit::depth::{BASE_WEIGHT, EDGE_WEIGHT};
use depthkit::edges::{auto_thresholds, boundary_weight_mask, canny_edges, dilate};
use depthkit::io::{read_pfm, write_pfm, PfmContent};
use depthkit::losses::{
    gfrl, normal_loss, relative_loss, scale_invariant_gradient, SamplePoint,
};
use depthkit::metrics::evaluate;
use depthkit::mixer::{next_batch, CurriculumSchedule, Category, DatasetDescriptor};
use depthkit::DepthMap;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn depth_values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.5f64..100.0, n)
}

/// Map whose values all sit on the f32 grid, as produced by a PFM reader.
fn f32_map(w: usize, h: usize) -> impl Strategy<Value = DepthMap> {
    prop::collection::vec(0.01f32..1.0e5, w * h).prop_map(move |vals| {
        DepthMap::from_values(w, h, vals.into_iter().map(f64::from).collect()).unwrap()
    })
}

fn map_pair(w: usize, h: usize) -> impl Strategy<Value = (DepthMap, DepthMap)> {
    (depth_values(w * h), depth_values(w * h)).prop_map(move |(a, b)| {
        (
            DepthMap::from_values(w, h, a).unwrap(),
            DepthMap::from_values(w, h, b).unwrap(),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn gradient_loss_is_scale_invariant(
        (pred, gt) in map_pair(9, 7),
        alpha in prop_oneof![Just(0.5), Just(2.0), Just(10.0), Just(0.25), 0.1f64..10.0],
    ) {
        let spacings = [1, 2, 4];
        let base = scale_invariant_gradient(&pred, &gt, &spacings).unwrap();
        let scale = |m: &DepthMap| {
            DepthMap::from_values(
                m.width(),
                m.height(),
                m.values().iter().map(|v| alpha * v).collect(),
            )
            .unwrap()
        };
        let scaled = scale_invariant_gradient(&scale(&pred), &scale(&gt), &spacings).unwrap();
        prop_assert!(
            (base - scaled).abs() <= 1e-12 * base.abs().max(scaled.abs()).max(1e-300),
            "loss moved under scaling: {base} vs {scaled} at alpha {alpha}"
        );
    }

    #[test]
    fn normal_loss_stays_in_range((pred, gt) in map_pair(8, 8)) {
        let value = normal_loss(&pred, &gt).unwrap();
        prop_assert!((0.0..=2.0).contains(&value));
    }

    #[test]
    fn zero_focus_ranking_loss_equals_the_plain_one(
        depths in prop::collection::vec((0.5f64..6.0, 0.5f64..6.0), 2..24),
    ) {
        let points: Vec<SamplePoint> = depths
            .iter()
            .enumerate()
            .map(|(i, (g, p))| SamplePoint {
                row: i,
                col: 0,
                depth_gt: *g,
                depth_pred: *p,
            })
            .collect();
        let focal = gfrl(&points, 0.0, 0.02).unwrap();
        let plain = relative_loss(&points, 0.02).unwrap();
        prop_assert_eq!(focal.to_bits(), plain.to_bits());
    }

    #[test]
    fn dilation_grows_monotonically(
        bits in prop::collection::vec(any::<bool>(), 63),
        k in prop_oneof![Just(1usize), Just(3), Just(5), Just(7)],
    ) {
        let mask = depthkit::BinaryMask::new(9, 7, bits).unwrap();
        let grown = dilate(&mask, k).unwrap();
        prop_assert!(mask.is_subset_of(&grown));
        let wider = dilate(&mask, k + 2).unwrap();
        prop_assert!(grown.is_subset_of(&wider));
    }

    #[test]
    fn boundary_weights_take_exactly_two_values(values in depth_values(144)) {
        let gt = DepthMap::from_values(12, 12, values).unwrap();
        let (low, high) = auto_thresholds(&gt);
        let weights = boundary_weight_mask(&gt, low, high).unwrap();
        for row in 0..12 {
            for col in 0..12 {
                let w = weights.get(row, col);
                prop_assert!(w == BASE_WEIGHT || w == EDGE_WEIGHT);
            }
        }
    }

    #[test]
    fn edge_mask_ignores_constant_depth_shifts(values in depth_values(100)) {
        let map = DepthMap::from_values(10, 10, values).unwrap();
        let shifted = DepthMap::from_values(
            10,
            10,
            map.values().iter().map(|v| v + 50.0).collect(),
        )
        .unwrap();
        let (low, high) = auto_thresholds(&map);
        prop_assert_eq!(
            canny_edges(&map, low, high).unwrap(),
            canny_edges(&shifted, low, high).unwrap()
        );
    }

    #[test]
    fn metric_thresholds_are_monotone((pred, gt) in map_pair(10, 10)) {
        let report = evaluate(&pred, &gt).unwrap();
        prop_assert!(report.delta1 <= report.delta2);
        prop_assert!(report.delta2 <= report.delta3);
        prop_assert!((0.0..=1.0).contains(&report.delta1));
        prop_assert!((0.0..=1.0).contains(&report.delta3));
    }

    #[test]
    fn metrics_scale_as_documented(
        (pred, gt) in map_pair(10, 10),
        alpha in prop_oneof![Just(0.5), Just(2.0), Just(10.0)],
    ) {
        let base = evaluate(&pred, &gt).unwrap();
        let scale = |m: &DepthMap| {
            DepthMap::from_values(
                m.width(),
                m.height(),
                m.values().iter().map(|v| alpha * v).collect(),
            )
            .unwrap()
        };
        let scaled = evaluate(&scale(&pred), &scale(&gt)).unwrap();
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0);
        prop_assert!(close(base.rel, scaled.rel));
        prop_assert!(close(base.log10, scaled.log10));
        prop_assert!(close(alpha * base.rmse, scaled.rmse));
        prop_assert_eq!(base.delta1, scaled.delta1);
        prop_assert_eq!(base.delta2, scaled.delta2);
        prop_assert_eq!(base.delta3, scaled.delta3);
    }

    #[test]
    fn pfm_round_trip_is_identity(map in f32_map(7, 5)) {
        let bytes = write_pfm(&map);
        let back = match read_pfm(&bytes).unwrap() {
            PfmContent::Depth(m) => m,
            PfmContent::Normals(_) => panic!("wrote a single-channel map"),
        };
        prop_assert_eq!(back, map);
    }

    #[test]
    fn pfm_parser_never_builds_a_broken_map(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(PfmContent::Depth(map)) = read_pfm(&bytes) {
            prop_assert!(map.validate().is_empty());
        }
    }

    #[test]
    fn sampled_tickets_always_index_into_active_datasets(
        seed in any::<u64>(),
        sizes in prop::collection::vec(1usize..50, 1..4),
    ) {
        let datasets: Vec<DatasetDescriptor> = sizes
            .iter()
            .enumerate()
            .map(|(i, size)| DatasetDescriptor {
                id: format!("d{i}"),
                category: Category::Indoor,
                size: *size,
            })
            .collect();
        let schedule =
            CurriculumSchedule::new(depthkit::mixer::default_stages(), datasets.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch = next_batch(&schedule, 32, &mut rng).unwrap();
        for entry in &batch.entries {
            let d = datasets.iter().find(|d| d.id == entry.dataset).unwrap();
            prop_assert!(entry.index < d.size);
        }
    }
}
