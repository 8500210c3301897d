//! Central finite-difference verification of every analytic gradient.
//!
//! Each check builds a seeded random problem, evaluates the analytic
//! gradient, then re-derives every entry with central differences
//! `(f(x + eps) - f(x - eps)) / (2 eps)` and reports the worst relative
//! discrepancy. Entries whose finite-difference window straddles a
//! non-smooth point (a ReLU gate, the reversed-Huber branch junction, the
//! max-residual argmax) are skipped and counted, never compared; block
//! checks instead resample until all gates sit clear of zero, which keeps
//! every entry comparable.
//!
//! Checks are deterministic per seed. A check passes when its worst
//! relative error stays under [`PASS_THRESHOLD`] at [`DEFAULT_EPSILON`].

use crate::blocks::{
    gcb_backward, gcb_forward, gcb_forward_cached, sab_backward, sab_forward, sab_forward_cached,
    FeatureGrid, GcbParams, SabParams,
};
use crate::depth::DepthMap;
use crate::losses::{
    berhu, berhu_with_grad, gfrl, gfrl_with_grad, normal_loss, normal_loss_with_grad,
    scale_invariant_gradient, scale_invariant_gradient_with_grad, SamplePoint,
};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Step size the verification suite runs at.
pub const DEFAULT_EPSILON: f64 = 1e-4;
/// Worst relative error a passing check may report.
pub const PASS_THRESHOLD: f64 = 1e-4;
/// Relative errors are measured against `max(|a|, |b|, REL_FLOOR)` so
/// near-zero gradient pairs do not blow up the quotient.
pub const REL_FLOOR: f64 = 1e-6;

/// Outcome of one gradient verification run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// What was differentiated ("sab", "gcb", "berhu", ...).
    pub target: String,
    pub seed: u64,
    pub epsilon: f64,
    /// Worst relative discrepancy between analytic and finite differences.
    pub max_rel_error: f64,
    /// Entries compared.
    pub entries_checked: usize,
    /// Entries excluded because a non-smooth point sat inside the window.
    pub entries_skipped: usize,
    /// Label of the worst entry, when any was checked.
    pub worst_entry: Option<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < PASS_THRESHOLD
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

struct Tally {
    max_rel: f64,
    checked: usize,
    skipped: usize,
    worst: Option<String>,
}

impl Tally {
    fn new() -> Tally {
        Tally {
            max_rel: 0.0,
            checked: 0,
            skipped: 0,
            worst: None,
        }
    }

    fn compare(&mut self, label: String, analytic: f64, fd: f64) {
        let err = rel_err(analytic, fd);
        self.checked += 1;
        if err > self.max_rel {
            self.max_rel = err;
            self.worst = Some(label);
        }
    }

    fn into_report(self, target: &str, seed: u64, epsilon: f64) -> GradCheckReport {
        GradCheckReport {
            target: target.to_string(),
            seed,
            epsilon,
            max_rel_error: self.max_rel,
            entries_checked: self.checked,
            entries_skipped: self.skipped,
            worst_entry: self.worst,
        }
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive and finite, got {epsilon}"
        )));
    }
    Ok(())
}

fn random_grid(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureGrid {
    let data = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
    FeatureGrid::new(c, h, w, data).expect("random grid data is finite")
}

fn random_depth_map(rng: &mut ChaCha8Rng, w: usize, h: usize) -> DepthMap {
    let values: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.5..5.0)).collect();
    DepthMap::from_values(w, h, values).expect("random depths are positive")
}

/// Scalar objective for block checks: the output contracted with a fixed
/// random projection, whose gradient is exactly that projection.
fn project(out: &FeatureGrid, projection: &FeatureGrid) -> f64 {
    out.data()
        .iter()
        .zip(projection.data())
        .map(|(o, p)| o * p)
        .sum()
}

/// Verifies the spatial attention block (inputs and all parameters).
pub fn check_sab(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = 2 + (seed % 3) as usize;
    let (h, w) = (4, 4);

    // Redraw until every attention pre-activation sits clear of the ReLU
    // gate, so no finite-difference window can cross it.
    let (d_next, gcb_feat, params) = loop {
        let d_next = random_grid(&mut rng, c, h, w);
        let gcb_feat = random_grid(&mut rng, c, h, w);
        let params = SabParams {
            channels: c,
            squeeze_weight: (0..2 * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            squeeze_bias: rng.random_range(-1.0..1.0),
            fuse_weight: (0..c * 2 * c * 9)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            fuse_bias: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let (_, att) = sab_forward(&d_next, &gcb_feat, &params)?;
        // `att` is the post-ReLU map; a pre-activation near zero shows up as
        // an attention value in [0, margin).
        let margin = 1e-3;
        let clear = att
            .iter()
            .all(|a| *a == 0.0 || *a > margin);
        let pre_clear = {
            // Negative pre-activations all map to 0; re-derive them to check
            // they are clearly negative.
            let mut ok = true;
            for r in 0..h {
                for col in 0..w {
                    let mut acc = params.squeeze_bias;
                    for ic in 0..2 * c {
                        let v = if ic < c {
                            d_next.get(ic, r, col)
                        } else {
                            gcb_feat.get(ic - c, r, col)
                        };
                        acc += params.squeeze_weight[ic] * v;
                    }
                    if acc.abs() <= margin {
                        ok = false;
                    }
                }
            }
            ok
        };
        if clear && pre_clear {
            break (d_next, gcb_feat, params);
        }
    };

    let projection = random_grid(&mut rng, c, h, w);
    let (_, _, cache) = sab_forward_cached(&d_next, &gcb_feat, &params)?;
    let grads = sab_backward(&params, &cache, &projection)?;

    let objective = |d: &FeatureGrid, g: &FeatureGrid, p: &SabParams| -> f64 {
        let (out, _) = sab_forward(d, g, p).expect("same shapes as the base problem");
        project(&out, &projection)
    };

    let mut tally = Tally::new();
    for (name, which) in [("d_next", 0usize), ("gcb_feat", 1)] {
        let base = if which == 0 { &d_next } else { &gcb_feat };
        for i in 0..base.data().len() {
            let mut lo = base.clone();
            let mut hi = base.clone();
            lo.data_mut()[i] -= epsilon;
            hi.data_mut()[i] += epsilon;
            let (f_lo, f_hi) = if which == 0 {
                (
                    objective(&lo, &gcb_feat, &params),
                    objective(&hi, &gcb_feat, &params),
                )
            } else {
                (
                    objective(&d_next, &lo, &params),
                    objective(&d_next, &hi, &params),
                )
            };
            let fd = (f_hi - f_lo) / (2.0 * epsilon);
            let analytic = if which == 0 {
                grads.d_next.data()[i]
            } else {
                grads.gcb_feat.data()[i]
            };
            tally.compare(format!("{name}[{i}]"), analytic, fd);
        }
    }

    let mut check_param = |label: &str, index: usize, analytic: f64| {
        let bump = |delta: f64| -> f64 {
            let mut p = params.clone();
            match label {
                "squeeze_weight" => p.squeeze_weight[index] += delta,
                "squeeze_bias" => p.squeeze_bias += delta,
                "fuse_weight" => p.fuse_weight[index] += delta,
                "fuse_bias" => p.fuse_bias[index] += delta,
                _ => unreachable!(),
            }
            objective(&d_next, &gcb_feat, &p)
        };
        let fd = (bump(epsilon) - bump(-epsilon)) / (2.0 * epsilon);
        tally.compare(format!("{label}[{index}]"), analytic, fd);
    };
    for i in 0..params.squeeze_weight.len() {
        check_param("squeeze_weight", i, grads.squeeze_weight[i]);
    }
    check_param("squeeze_bias", 0, grads.squeeze_bias);
    for i in 0..params.fuse_weight.len() {
        check_param("fuse_weight", i, grads.fuse_weight[i]);
    }
    for i in 0..params.fuse_bias.len() {
        check_param("fuse_bias", i, grads.fuse_bias[i]);
    }

    Ok(tally.into_report("sab", seed, epsilon))
}

/// Verifies the global context block (input and all parameters).
pub fn check_gcb(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = if seed.is_multiple_of(2) { 4 } else { 2 };
    let ratio = 2;
    let b = c / ratio;
    let (h, w) = (3, 3);

    // Redraw until the bottleneck ReLU gates sit clear of zero and (for
    // bottlenecks wider than one) the layer-norm variance is healthy, so
    // finite differences stay on one smooth branch.
    let (x, params) = loop {
        let x = random_grid(&mut rng, c, h, w);
        let params = GcbParams {
            channels: c,
            ratio,
            key_kernel: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            transform_down: (0..b * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            transform_up: (0..c * b).map(|_| rng.random_range(-1.0..1.0)).collect(),
            norm_scale: (0..b).map(|_| rng.random_range(0.5..1.5)).collect(),
            norm_shift: (0..b).map(|_| rng.random_range(-0.5..0.5)).collect(),
        };
        if gcb_gates_clear(&x, &params) {
            break (x, params);
        }
    };

    let projection = random_grid(&mut rng, c, h, w);
    let (_, cache) = gcb_forward_cached(&x, &params)?;
    let grads = gcb_backward(&params, &cache, &projection)?;

    let objective = |x: &FeatureGrid, p: &GcbParams| -> f64 {
        project(&gcb_forward(x, p).expect("same shapes as the base problem"), &projection)
    };

    let mut tally = Tally::new();
    for i in 0..x.data().len() {
        let mut lo = x.clone();
        let mut hi = x.clone();
        lo.data_mut()[i] -= epsilon;
        hi.data_mut()[i] += epsilon;
        let fd = (objective(&hi, &params) - objective(&lo, &params)) / (2.0 * epsilon);
        tally.compare(format!("x[{i}]"), grads.x.data()[i], fd);
    }

    let fields: [(&str, usize); 5] = [
        ("key_kernel", params.key_kernel.len()),
        ("transform_down", params.transform_down.len()),
        ("transform_up", params.transform_up.len()),
        ("norm_scale", params.norm_scale.len()),
        ("norm_shift", params.norm_shift.len()),
    ];
    for (label, len) in fields {
        for i in 0..len {
            let analytic = match label {
                "key_kernel" => grads.key_kernel[i],
                "transform_down" => grads.transform_down[i],
                "transform_up" => grads.transform_up[i],
                "norm_scale" => grads.norm_scale[i],
                "norm_shift" => grads.norm_shift[i],
                _ => unreachable!(),
            };
            let bump = |delta: f64| -> f64 {
                let mut p = params.clone();
                match label {
                    "key_kernel" => p.key_kernel[i] += delta,
                    "transform_down" => p.transform_down[i] += delta,
                    "transform_up" => p.transform_up[i] += delta,
                    "norm_scale" => p.norm_scale[i] += delta,
                    "norm_shift" => p.norm_shift[i] += delta,
                    _ => unreachable!(),
                }
                objective(&x, &p)
            };
            let fd = (bump(epsilon) - bump(-epsilon)) / (2.0 * epsilon);
            tally.compare(format!("{label}[{i}]"), analytic, fd);
        }
    }

    Ok(tally.into_report("gcb", seed, epsilon))
}

/// True when every ReLU pre-activation in the bottleneck is clear of zero
/// and the layer-norm variance is not degenerate.
fn gcb_gates_clear(x: &FeatureGrid, params: &GcbParams) -> bool {
    let c = params.channels;
    let b = params.bottleneck();
    let (h, w) = (x.height(), x.width());
    let mut logits = Vec::with_capacity(h * w);
    for r in 0..h {
        for col in 0..w {
            logits.push((0..c).map(|ch| params.key_kernel[ch] * x.get(ch, r, col)).sum::<f64>());
        }
    }
    let max_logit = logits.iter().fold(f64::NEG_INFINITY, |a, l| a.max(*l));
    let weights: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
    let z: f64 = weights.iter().sum();
    let context: Vec<f64> = (0..c)
        .map(|ch| {
            let mut acc = 0.0;
            for r in 0..h {
                for col in 0..w {
                    acc += weights[r * w + col] / z * x.get(ch, r, col);
                }
            }
            acc
        })
        .collect();
    let down: Vec<f64> = (0..b)
        .map(|j| (0..c).map(|ch| params.transform_down[j * c + ch] * context[ch]).sum())
        .collect();
    let mean = down.iter().sum::<f64>() / b as f64;
    let var = down.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / b as f64;
    if b > 1 && var < 0.05 {
        return false;
    }
    let inv_std = 1.0 / (var + crate::blocks::LAYER_NORM_EPS).sqrt();
    (0..b).all(|j| {
        let normed = params.norm_scale[j] * (down[j] - mean) * inv_std + params.norm_shift[j];
        normed.abs() > 0.05
    })
}

/// Verifies the reversed-Huber gradient, skipping pixels whose residual
/// sits within the finite-difference window of the branch junction or of
/// the maximum residual (where the adaptive cutoff changes hands).
pub fn check_berhu(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_depth_map(&mut rng, 8, 8);
    let pred = random_depth_map(&mut rng, 8, 8);
    let (_, grad) = berhu_with_grad(&pred, &gt, None)?;

    let residuals: Vec<f64> = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| (p - g).abs())
        .collect();
    let max_abs = residuals.iter().fold(0.0f64, |a, r| a.max(*r));
    let second = residuals
        .iter()
        .filter(|r| **r < max_abs)
        .fold(0.0f64, |a, r| a.max(*r));
    let c = 0.2 * max_abs;
    let guard = 50.0 * epsilon;

    let mut tally = Tally::new();
    for i in 0..64 {
        let near_junction = (residuals[i] - c).abs() < guard;
        let contends_for_max = max_abs - residuals[i] < guard
            && (residuals[i] < max_abs || max_abs - second < guard);
        if near_junction || contends_for_max {
            tally.skipped += 1;
            continue;
        }
        let eval = |delta: f64| -> f64 {
            let mut values = pred.values().to_vec();
            values[i] += delta;
            let bumped = DepthMap::from_values(8, 8, values).expect("bumped depth stays positive");
            berhu(&bumped, &gt, None).expect("same overlap as the base problem")
        };
        let fd = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
        tally.compare(format!("pred[{i}]"), grad[i], fd);
    }
    Ok(tally.into_report("berhu", seed, epsilon))
}

/// Verifies the scale-invariant gradient loss (smooth everywhere for
/// positive depths).
pub fn check_gradient_loss(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_depth_map(&mut rng, 8, 8);
    let pred = random_depth_map(&mut rng, 8, 8);
    let spacings = [1, 2, 4];
    let (_, grad) = scale_invariant_gradient_with_grad(&pred, &gt, &spacings)?;

    let mut tally = Tally::new();
    for i in 0..64 {
        let eval = |delta: f64| -> f64 {
            let mut values = pred.values().to_vec();
            values[i] += delta;
            let bumped = DepthMap::from_values(8, 8, values).expect("bumped depth stays positive");
            scale_invariant_gradient(&bumped, &gt, &spacings)
                .expect("same overlap as the base problem")
        };
        let fd = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
        tally.compare(format!("pred[{i}]"), grad[i], fd);
    }
    Ok(tally.into_report("gradient_loss", seed, epsilon))
}

/// Verifies the surface-normal loss gradient.
pub fn check_normal_loss(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = random_depth_map(&mut rng, 8, 8);
    let pred = random_depth_map(&mut rng, 8, 8);
    let (_, grad) = normal_loss_with_grad(&pred, &gt)?;

    let mut tally = Tally::new();
    for i in 0..64 {
        let eval = |delta: f64| -> f64 {
            let mut values = pred.values().to_vec();
            values[i] += delta;
            let bumped = DepthMap::from_values(8, 8, values).expect("bumped depth stays positive");
            normal_loss(&bumped, &gt).expect("same overlap as the base problem")
        };
        let fd = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
        tally.compare(format!("pred[{i}]"), grad[i], fd);
    }
    Ok(tally.into_report("normal_loss", seed, epsilon))
}

/// Verifies the ranking-loss gradient over a random point set.
///
/// The ordinal relations come from the (un-bumped) ground-truth depths, so
/// the objective is smooth in every predicted depth.
pub fn check_gfrl(seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    check_epsilon(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<SamplePoint> = (0..16)
        .map(|i| SamplePoint {
            row: i / 4,
            col: i % 4,
            depth_gt: rng.random_range(0.5..6.0),
            depth_pred: rng.random_range(0.5..6.0),
        })
        .collect();
    let gamma = 2.0;
    let tau = 0.02;
    let (_, grad) = gfrl_with_grad(&points, gamma, tau)?;

    let mut tally = Tally::new();
    for i in 0..points.len() {
        let eval = |delta: f64| -> f64 {
            let mut bumped = points.clone();
            bumped[i].depth_pred += delta;
            gfrl(&bumped, gamma, tau).expect("bumped prediction stays positive")
        };
        let fd = (eval(epsilon) - eval(-epsilon)) / (2.0 * epsilon);
        tally.compare(format!("point[{i}]"), grad[i], fd);
    }
    Ok(tally.into_report("gfrl", seed, epsilon))
}

/// Runs every gradient check at one seed.
pub fn check_all(seed: u64, epsilon: f64) -> Result<Vec<GradCheckReport>> {
    Ok(vec![
        check_sab(seed, epsilon)?,
        check_gcb(seed, epsilon)?,
        check_berhu(seed, epsilon)?,
        check_gradient_loss(seed, epsilon)?,
        check_normal_loss(seed, epsilon)?,
        check_gfrl(seed, epsilon)?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_target_passes_at_default_epsilon() {
        for seed in 0..4 {
            for report in check_all(seed, DEFAULT_EPSILON).unwrap() {
                assert!(
                    report.passed(),
                    "{} failed at seed {seed}: max rel error {} at {:?}",
                    report.target,
                    report.max_rel_error,
                    report.worst_entry
                );
                assert!(report.entries_checked > 0);
            }
        }
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        assert!(check_sab(0, 0.0).is_err());
        assert!(check_gcb(0, -1e-4).is_err());
        assert!(check_berhu(0, f64::NAN).is_err());
    }

    #[test]
    fn reports_are_deterministic_per_seed() {
        let a = check_sab(7, DEFAULT_EPSILON).unwrap();
        let b = check_sab(7, DEFAULT_EPSILON).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_rel_error.to_bits(), b.max_rel_error.to_bits());
    }

    #[test]
    fn reports_serialize_with_target_names() {
        let report = check_gfrl(3, DEFAULT_EPSILON).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"target\":\"gfrl\""));
        assert!(json.contains("\"entries_checked\":16"));
    }
}
