//! Standard depth-estimation evaluation metrics over valid-pixel overlap.

use crate::depth::DepthMap;
use crate::par::map_indexed;
use crate::{check_same_shape, Error, Result};
use serde::{Deserialize, Serialize};

/// The four standard metrics plus the pixel count they were computed over.
///
/// `delta1 <= delta2 <= delta3` always holds since the thresholds nest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Mean absolute relative error `|pred - gt| / gt`.
    pub rel: f64,
    /// Root of the mean squared error in meters.
    pub rmse: f64,
    /// Mean absolute difference of base-10 log depths.
    pub log10: f64,
    /// Fraction of pixels with `max(pred/gt, gt/pred) < 1.25`.
    pub delta1: f64,
    /// Same with threshold `1.25^2`.
    pub delta2: f64,
    /// Same with threshold `1.25^3`.
    pub delta3: f64,
    /// Number of jointly-valid pixels the metrics cover.
    pub pixel_count: usize,
}

/// Computes all metrics over the jointly-valid pixels of both maps.
///
/// The threshold accuracies use strict `<`, so a uniform prediction of
/// exactly `1.25 * gt` scores `delta1 = 0`.
pub fn evaluate(pred: &DepthMap, gt: &DepthMap) -> Result<MetricsReport> {
    check_same_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    let w = pred.width();
    let thresholds = [1.25f64, 1.25 * 1.25, 1.25 * 1.25 * 1.25];

    struct Partial {
        count: usize,
        abs_rel: f64,
        sq: f64,
        log: f64,
        inliers: [usize; 3],
    }

    let rows: Vec<Partial> = map_indexed(pred.height(), |row| {
        let mut p = Partial {
            count: 0,
            abs_rel: 0.0,
            sq: 0.0,
            log: 0.0,
            inliers: [0; 3],
        };
        for col in 0..w {
            if !(pred.is_valid(row, col) && gt.is_valid(row, col)) {
                continue;
            }
            let d = pred.get(row, col);
            let g = gt.get(row, col);
            p.count += 1;
            p.abs_rel += (d - g).abs() / g;
            p.sq += (d - g) * (d - g);
            p.log += (d.log10() - g.log10()).abs();
            let ratio = (d / g).max(g / d);
            for (k, t) in thresholds.iter().enumerate() {
                if ratio < *t {
                    p.inliers[k] += 1;
                }
            }
        }
        p
    });

    let mut count = 0usize;
    let mut abs_rel = 0.0;
    let mut sq = 0.0;
    let mut log = 0.0;
    let mut inliers = [0usize; 3];
    for p in rows {
        count += p.count;
        abs_rel += p.abs_rel;
        sq += p.sq;
        log += p.log;
        for (acc, inl) in inliers.iter_mut().zip(p.inliers) {
            *acc += inl;
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let n = count as f64;
    Ok(MetricsReport {
        rel: abs_rel / n,
        rmse: (sq / n).sqrt(),
        log10: log / n,
        delta1: inliers[0] as f64 / n,
        delta2: inliers[1] as f64 / n,
        delta3: inliers[2] as f64 / n,
        pixel_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
        let values: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.5..8.0)).collect();
        DepthMap::from_values(w, h, values).unwrap()
    }

    #[test]
    fn identical_maps_are_perfect() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let map = random_map(&mut rng, 13, 9);
        let report = evaluate(&map, &map).unwrap();
        assert_eq!(report.rel, 0.0);
        assert_eq!(report.rmse, 0.0);
        assert_eq!(report.log10, 0.0);
        assert_eq!(report.delta1, 1.0);
        assert_eq!(report.delta2, 1.0);
        assert_eq!(report.delta3, 1.0);
        assert_eq!(report.pixel_count, 13 * 9);
    }

    #[test]
    fn uniform_twenty_percent_overshoot() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt = random_map(&mut rng, 10, 10);
        let pred = DepthMap::from_values(
            10,
            10,
            gt.values().iter().map(|v| 1.2 * v).collect(),
        )
        .unwrap();
        let report = evaluate(&pred, &gt).unwrap();
        assert_relative_eq!(report.rel, 0.2, max_relative = 1e-12);
        assert_relative_eq!(report.log10, 1.2f64.log10(), max_relative = 1e-12);
        assert_eq!(report.delta1, 1.0, "1.2 < 1.25");
    }

    #[test]
    fn threshold_is_strict() {
        // Ratios of exactly 1.25 by construction (dyadic values).
        let gt = DepthMap::from_values(3, 1, vec![1.0, 2.0, 4.0]).unwrap();
        let pred = DepthMap::from_values(3, 1, vec![1.25, 2.5, 5.0]).unwrap();
        let report = evaluate(&pred, &gt).unwrap();
        assert_eq!(report.delta1, 0.0);
        assert_eq!(report.delta2, 1.0);
        assert_eq!(report.delta3, 1.0);
    }

    #[test]
    fn rmse_and_rel_two_pixel_example() {
        let gt = DepthMap::from_values(2, 1, vec![1.0, 1.0]).unwrap();
        let pred = DepthMap::from_values(2, 1, vec![1.0, 3.0]).unwrap();
        let report = evaluate(&pred, &gt).unwrap();
        assert_relative_eq!(report.rmse, 2f64.sqrt(), max_relative = 1e-15);
        assert_eq!(report.rel, 1.0);
    }

    #[test]
    fn deltas_are_monotone_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let gt = random_map(&mut rng, 16, 12);
            let pred = random_map(&mut rng, 16, 12);
            let report = evaluate(&pred, &gt).unwrap();
            assert!(report.delta1 <= report.delta2);
            assert!(report.delta2 <= report.delta3);
            assert!(report.rel >= 0.0 && report.rmse >= 0.0 && report.log10 >= 0.0);
        }
    }

    #[test]
    fn symmetric_metrics_survive_argument_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a = random_map(&mut rng, 14, 14);
        let b = random_map(&mut rng, 14, 14);
        let fwd = evaluate(&a, &b).unwrap();
        let rev = evaluate(&b, &a).unwrap();
        // The ratio max and the log difference are symmetric in (pred, gt);
        // rel is not because its denominator is the ground truth.
        assert_eq!(fwd.delta1, rev.delta1);
        assert_eq!(fwd.delta2, rev.delta2);
        assert_eq!(fwd.delta3, rev.delta3);
        assert_relative_eq!(fwd.log10, rev.log10, max_relative = 1e-12);
        assert_relative_eq!(fwd.rmse, rev.rmse, max_relative = 1e-12);
    }

    #[test]
    fn invalid_pixels_are_excluded() {
        let gt = DepthMap::from_values(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let mut pred = DepthMap::from_values(2, 2, vec![1.0, 500.0, 9.0, 1.0]).unwrap();
        pred.invalidate(0, 1); // hides the 500 m outlier
        let report = evaluate(&pred, &gt).unwrap();
        assert_eq!(report.pixel_count, 2);
        assert_eq!(report.rel, 0.0);
        assert_eq!(report.delta1, 1.0);
    }

    #[test]
    fn empty_overlap_is_an_error() {
        let gt = DepthMap::from_values(2, 1, vec![0.0, -1.0]).unwrap();
        let pred = DepthMap::constant(2, 1, 1.0).unwrap();
        assert!(matches!(evaluate(&pred, &gt), Err(Error::EmptyOverlap)));
    }
}
