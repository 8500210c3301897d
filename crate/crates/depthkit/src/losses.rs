//! The four training loss terms and the staged total loss.
//!
//! All losses reduce with a mean over contributing elements rather than a
//! sum, so values are comparable across image sizes and the stage weights
//! transfer unchanged. Each loss comes in a plain flavor and a `_with_grad`
//! flavor returning the analytic gradient with respect to the prediction;
//! both run the same accumulation code, so the reported values are
//! bit-identical.
//!
//! * `berhu`: reversed Huber on depth residuals, L1 near zero and quadratic
//!   past an adaptive cutoff `c = 0.2 max |residual|`, optionally weighted
//!   per pixel by an edge-aware [`WeightMask`];
//! * `scale_invariant_gradient`: squared differences of normalized depth
//!   gradients at multiple pixel spacings, invariant to global rescaling;
//! * `normal_loss`: one minus the cosine between surface normals derived
//!   from depth gradients;
//! * `gfrl`: a focal ordinal ranking loss over sampled point pairs, with
//!   `relative_loss` as its focusing-free special case.

use crate::depth::{forward_gradients, gradient_stencil_valid, DepthMap, WeightMask};
use crate::par::map_indexed;
use crate::{check_same_shape, Error, Result};
use rand::Rng;
use serde::Serialize;

/// Multi-spacing set used by the gradient loss on images of at least 17
/// pixels in one extent.
pub const DEFAULT_SPACINGS: [usize; 5] = [1, 2, 4, 8, 16];
/// Stage weights for (berhu, gradient, normal, ranking).
pub const DEFAULT_LAMBDAS: [f64; 4] = [1.0, 1.0, 1.0, 0.5];
/// Focusing exponent of the ranking loss.
pub const DEFAULT_GAMMA: f64 = 2.0;
/// Depth-ratio threshold under which two points count as equally deep.
pub const DEFAULT_TAU: f64 = 0.02;
/// Default block grid for ranking-loss point sampling.
pub const DEFAULT_GRID: usize = 16;

/// One sampled pixel carrying both depths, input to the ranking losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplePoint {
    pub row: usize,
    pub col: usize,
    pub depth_gt: f64,
    pub depth_pred: f64,
}

/// A pair of sampled points with their ground-truth ordinal relation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrdinalPair {
    pub a: SamplePoint,
    pub b: SamplePoint,
    /// +1 when `a` is deeper, -1 when `b` is deeper, 0 when the depths are
    /// within the ratio threshold of each other.
    pub relation: i8,
}

/// Training stage of the three-phase curriculum over loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StageId {
    I,
    II,
    III,
}

/// Component values of one total-loss evaluation.
///
/// All four components are always computed; `stage` masks which of them
/// enter `total`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub berhu: f64,
    pub gradient: f64,
    pub normal: f64,
    pub gfrl: f64,
    pub total: f64,
    pub stage: StageId,
    pub weights: [f64; 4],
}

/// Knobs of [`total_loss`] with the published defaults.
#[derive(Debug, Clone)]
pub struct TotalLossConfig {
    pub lambdas: [f64; 4],
    pub gamma: f64,
    pub tau: f64,
    pub spacings: Vec<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Extend the edge-aware weights from the residual loss to the gradient
    /// and normal terms as well.
    pub weight_all_pixel_losses: bool,
}

impl Default for TotalLossConfig {
    fn default() -> Self {
        TotalLossConfig {
            lambdas: DEFAULT_LAMBDAS,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            spacings: DEFAULT_SPACINGS.to_vec(),
            grid_rows: DEFAULT_GRID,
            grid_cols: DEFAULT_GRID,
            weight_all_pixel_losses: false,
        }
    }
}

fn check_weights_shape(map: &DepthMap, weights: Option<&WeightMask>) -> Result<()> {
    match weights {
        Some(w) => check_same_shape(map.width(), map.height(), w.width(), w.height()),
        None => Ok(()),
    }
}

/// Reversed Huber loss over jointly-valid pixels.
///
/// The cutoff `c = 0.2 max_p |pred_p - gt_p|` adapts to the residual range
/// of the call: residuals at or below `c` contribute their absolute value,
/// larger ones the quadratic `(x^2 + c^2) / (2c)`. With `weights` given,
/// each pixel term is multiplied by its weight; the denominator stays the
/// plain pixel count. Identical maps short-circuit to 0 since `c` collapses.
pub fn berhu(pred: &DepthMap, gt: &DepthMap, weights: Option<&WeightMask>) -> Result<f64> {
    berhu_core(pred, gt, weights, None)
}

/// [`berhu`] plus its gradient with respect to the prediction.
///
/// The cutoff depends on the largest-residual pixel, so that pixel receives
/// an extra gradient contribution through `c`; omitting it would fail any
/// finite-difference check.
pub fn berhu_with_grad(
    pred: &DepthMap,
    gt: &DepthMap,
    weights: Option<&WeightMask>,
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; pred.values().len()];
    let value = berhu_core(pred, gt, weights, Some(&mut grad))?;
    Ok((value, grad))
}

fn berhu_core(
    pred: &DepthMap,
    gt: &DepthMap,
    weights: Option<&WeightMask>,
    grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    check_same_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    check_weights_shape(pred, weights)?;
    let w = pred.width();
    let h = pred.height();

    // First pass: per-row count and max |residual|, folded in row order.
    let row_stats: Vec<(usize, f64, usize)> = map_indexed(h, |row| {
        let mut count = 0;
        let mut max_abs = 0.0f64;
        let mut argmax = usize::MAX;
        for col in 0..w {
            if !(pred.is_valid(row, col) && gt.is_valid(row, col)) {
                continue;
            }
            count += 1;
            let r = (pred.get(row, col) - gt.get(row, col)).abs();
            if r > max_abs {
                max_abs = r;
                argmax = row * w + col;
            }
        }
        (count, max_abs, argmax)
    });
    let mut count = 0usize;
    let mut max_abs = 0.0f64;
    let mut argmax = usize::MAX;
    for (n, m, a) in row_stats {
        count += n;
        if m > max_abs {
            max_abs = m;
            argmax = a;
        }
    }
    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    if max_abs == 0.0 {
        return Ok(0.0);
    }
    let c = 0.2 * max_abs;

    // Second pass: weighted per-pixel terms. The gradient of the quadratic
    // branch with respect to the cutoff is tracked alongside so the
    // largest-residual pixel can be charged for moving `c`.
    let row_sums: Vec<(f64, f64)> = map_indexed(h, |row| {
        let mut sum = 0.0;
        let mut dloss_dc = 0.0;
        for col in 0..w {
            if !(pred.is_valid(row, col) && gt.is_valid(row, col)) {
                continue;
            }
            let weight = weights.map_or(1.0, |m| m.get(row, col));
            let r = pred.get(row, col) - gt.get(row, col);
            let a = r.abs();
            if a <= c {
                sum += weight * a;
            } else {
                sum += weight * (r * r + c * c) / (2.0 * c);
                dloss_dc += weight * (c * c - r * r) / (2.0 * c * c);
            }
        }
        (sum, dloss_dc)
    });
    let mut sum = 0.0;
    let mut dloss_dc = 0.0;
    for (s, d) in row_sums {
        sum += s;
        dloss_dc += d;
    }
    let n = count as f64;

    if let Some(grad) = grad {
        for row in 0..h {
            for col in 0..w {
                if !(pred.is_valid(row, col) && gt.is_valid(row, col)) {
                    continue;
                }
                let i = row * w + col;
                let weight = weights.map_or(1.0, |m| m.get(row, col));
                let r = pred.get(row, col) - gt.get(row, col);
                let direct = if r.abs() <= c {
                    weight * r.signum()
                } else {
                    weight * r / c
                };
                grad[i] = direct / n;
            }
        }
        let rm = pred.values()[argmax] - gt.values()[argmax];
        grad[argmax] += 0.2 * rm.signum() * dloss_dc / n;
    }
    Ok(sum / n)
}

fn check_spacings(spacings: &[usize], width: usize, height: usize) -> Result<()> {
    if spacings.is_empty() {
        return Err(Error::InvalidArgument(
            "at least one gradient spacing is required".into(),
        ));
    }
    for &s in spacings {
        if s == 0 || s >= width.max(height) {
            return Err(Error::InvalidArgument(format!(
                "spacing {s} out of range for a {width}x{height} image"
            )));
        }
    }
    Ok(())
}

/// Normalized forward difference `(far - near) / |far + near|` and its
/// partial derivatives with respect to `near` and `far`.
#[inline]
fn norm_grad(near: f64, far: f64) -> (f64, f64, f64) {
    let denom = (far + near).abs();
    let g = (far - near) / denom;
    // For positive depths |far + near| = far + near, so:
    let d_near = -2.0 * far / (denom * denom);
    let d_far = 2.0 * near / (denom * denom);
    (g, d_near, d_far)
}

/// Scale-invariant gradient loss over multiple spacings.
///
/// For each spacing `s` and pixel, the depth gradient is normalized by the
/// local depth sum, `(d[i+s] - d[i]) / |d[i+s] + d[i]|`, making it
/// invariant under global rescaling of the map. A pixel contributes at a
/// spacing when at least one direction has its offset in bounds with all
/// four samples valid; the loss is the mean squared gradient difference
/// over contributing (spacing, pixel) entries.
pub fn scale_invariant_gradient(
    pred: &DepthMap,
    gt: &DepthMap,
    spacings: &[usize],
) -> Result<f64> {
    gradient_core(pred, gt, spacings, None, None)
}

/// [`scale_invariant_gradient`] plus its gradient w.r.t. the prediction.
pub fn scale_invariant_gradient_with_grad(
    pred: &DepthMap,
    gt: &DepthMap,
    spacings: &[usize],
) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; pred.values().len()];
    let value = gradient_core(pred, gt, spacings, None, Some(&mut grad))?;
    Ok((value, grad))
}

pub(crate) fn gradient_core(
    pred: &DepthMap,
    gt: &DepthMap,
    spacings: &[usize],
    weights: Option<&WeightMask>,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    check_same_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    check_weights_shape(pred, weights)?;
    check_spacings(spacings, pred.width(), pred.height())?;
    let w = pred.width();
    let h = pred.height();

    let pair_ok = |r0: usize, c0: usize, r1: usize, c1: usize| {
        pred.is_valid(r0, c0) && pred.is_valid(r1, c1) && gt.is_valid(r0, c0) && gt.is_valid(r1, c1)
    };

    // Value accumulation is per anchor row so it can run in parallel and
    // fold deterministically; the gradient pass below repeats the exact
    // same traversal order sequentially.
    let run_row = |row: usize, mut sink: Option<&mut Vec<f64>>| -> (f64, usize) {
        let mut sum = 0.0;
        let mut contributing = 0usize;
        for col in 0..w {
            for &s in spacings {
                let mut any = false;
                let mut term = 0.0;
                let weight = weights.map_or(1.0, |m| m.get(row, col));
                // Vertical difference toward row + s.
                if row + s < h && pair_ok(row, col, row + s, col) {
                    any = true;
                    let (gp, dp_near, dp_far) =
                        norm_grad(pred.get(row, col), pred.get(row + s, col));
                    let (gg, _, _) = norm_grad(gt.get(row, col), gt.get(row + s, col));
                    let diff = gg - gp;
                    term += diff * diff;
                    if let Some(grad) = sink.as_deref_mut() {
                        let coeff = -2.0 * weight * diff;
                        grad[row * w + col] += coeff * dp_near;
                        grad[(row + s) * w + col] += coeff * dp_far;
                    }
                }
                // Horizontal difference toward col + s.
                if col + s < w && pair_ok(row, col, row, col + s) {
                    any = true;
                    let (gp, dp_near, dp_far) =
                        norm_grad(pred.get(row, col), pred.get(row, col + s));
                    let (gg, _, _) = norm_grad(gt.get(row, col), gt.get(row, col + s));
                    let diff = gg - gp;
                    term += diff * diff;
                    if let Some(grad) = sink.as_deref_mut() {
                        let coeff = -2.0 * weight * diff;
                        grad[row * w + col] += coeff * dp_near;
                        grad[row * w + col + s] += coeff * dp_far;
                    }
                }
                if any {
                    sum += weight * term;
                    contributing += 1;
                }
            }
        }
        (sum, contributing)
    };

    let (total, count) = if let Some(grad) = grad.as_deref_mut() {
        let mut total = 0.0;
        let mut count = 0usize;
        for row in 0..h {
            let (sum, n) = run_row(row, Some(&mut *grad));
            total += sum;
            count += n;
        }
        (total, count)
    } else {
        let rows: Vec<(f64, usize)> = map_indexed(h, |row| run_row(row, None));
        let mut total = 0.0;
        let mut count = 0usize;
        for (sum, n) in rows {
            total += sum;
            count += n;
        }
        (total, count)
    };

    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let n = count as f64;
    if let Some(grad) = grad {
        for g in grad.iter_mut() {
            *g /= n;
        }
    }
    Ok(total / n)
}

/// Surface-normal loss: mean of `1 - cos(n_gt, n_pred)` over pixels whose
/// gradient stencils are fully valid in both maps.
///
/// Normals are the unnormalized `[-dx, -dy, 1]` from [`compute_normals`],
/// so their length is at least 1 and the cosine is always defined. The
/// cosine is clamped to [-1, 1] against rounding so per-pixel terms stay in
/// [0, 2].
///
/// [`compute_normals`]: crate::depth::compute_normals
pub fn normal_loss(pred: &DepthMap, gt: &DepthMap) -> Result<f64> {
    normal_core(pred, gt, None, None)
}

/// [`normal_loss`] plus its gradient w.r.t. the prediction.
pub fn normal_loss_with_grad(pred: &DepthMap, gt: &DepthMap) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; pred.values().len()];
    let value = normal_core(pred, gt, None, Some(&mut grad))?;
    Ok((value, grad))
}

pub(crate) fn normal_core(
    pred: &DepthMap,
    gt: &DepthMap,
    weights: Option<&WeightMask>,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    check_same_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    check_weights_shape(pred, weights)?;
    let w = pred.width();
    let h = pred.height();

    let run_row = |row: usize, mut sink: Option<&mut Vec<f64>>| -> (f64, usize) {
        let mut sum = 0.0;
        let mut count = 0usize;
        for col in 0..w {
            if !(gradient_stencil_valid(pred, row, col) && gradient_stencil_valid(gt, row, col)) {
                continue;
            }
            let weight = weights.map_or(1.0, |m| m.get(row, col));
            let (pgx, pgy) = forward_gradients(pred, row, col);
            let (ggx, ggy) = forward_gradients(gt, row, col);
            let m = [-pgx, -pgy, 1.0];
            let ngt = [-ggx, -ggy, 1.0];
            let dot = m[0] * ngt[0] + m[1] * ngt[1] + m[2];
            let m_norm = (m[0] * m[0] + m[1] * m[1] + 1.0).sqrt();
            let n_norm = (ngt[0] * ngt[0] + ngt[1] * ngt[1] + 1.0).sqrt();
            let cos = (dot / (m_norm * n_norm)).clamp(-1.0, 1.0);
            sum += weight * (1.0 - cos);
            count += 1;

            if let Some(grad) = sink.as_deref_mut() {
                // d(1 - cos)/dm, then back through m = [-gx, -gy, 1] into the
                // forward-difference stencil of the prediction.
                let scale = 1.0 / (m_norm * n_norm);
                let ds_dm = [
                    ngt[0] * scale - cos * m[0] / (m_norm * m_norm),
                    ngt[1] * scale - cos * m[1] / (m_norm * m_norm),
                ];
                let d_gx = weight * ds_dm[0]; // -(-1) through m[0] = -gx
                let d_gy = weight * ds_dm[1];
                // Horizontal stencil.
                if w > 1 {
                    if col + 1 < w {
                        grad[row * w + col + 1] += d_gx;
                        grad[row * w + col] -= d_gx;
                    } else {
                        grad[row * w + col] += d_gx;
                        grad[row * w + col - 1] -= d_gx;
                    }
                }
                // Vertical stencil.
                if h > 1 {
                    if row + 1 < h {
                        grad[(row + 1) * w + col] += d_gy;
                        grad[row * w + col] -= d_gy;
                    } else {
                        grad[row * w + col] += d_gy;
                        grad[(row - 1) * w + col] -= d_gy;
                    }
                }
            }
        }
        (sum, count)
    };

    let (total, count) = if let Some(grad) = grad.as_deref_mut() {
        let mut total = 0.0;
        let mut count = 0usize;
        for row in 0..h {
            let (sum, n) = run_row(row, Some(&mut *grad));
            total += sum;
            count += n;
        }
        (total, count)
    } else {
        let rows: Vec<(f64, usize)> = map_indexed(h, |row| run_row(row, None));
        let mut total = 0.0;
        let mut count = 0usize;
        for (sum, n) in rows {
            total += sum;
            count += n;
        }
        (total, count)
    };

    if count == 0 {
        return Err(Error::EmptyOverlap);
    }
    let n = count as f64;
    if let Some(grad) = grad {
        for g in grad.iter_mut() {
            *g /= n;
        }
    }
    Ok(total / n)
}

/// Draws one jointly-valid pixel per grid block.
///
/// The image is partitioned into `rows x cols` rectangular blocks; when the
/// extent does not divide evenly, the last blocks take the remainder pixels.
/// Within each block one pixel is drawn uniformly among the jointly-valid
/// ones (row-major enumeration), and blocks without any valid pixel are
/// skipped without consuming randomness. The result is deterministic given
/// the rng state and depends only on the validity pattern, never the depth
/// values.
pub fn sample_grid_points<R: Rng + ?Sized>(
    gt: &DepthMap,
    pred: &DepthMap,
    rows: usize,
    cols: usize,
    rng: &mut R,
) -> Result<Vec<SamplePoint>> {
    check_same_shape(pred.width(), pred.height(), gt.width(), gt.height())?;
    let w = gt.width();
    let h = gt.height();
    if rows == 0 || cols == 0 || rows > h || cols > w {
        return Err(Error::GridTooFine {
            width: w,
            height: h,
            rows,
            cols,
        });
    }

    // Block b covers base-sized extents, with the last `extent % blocks`
    // blocks one pixel larger.
    let bounds = |extent: usize, blocks: usize, b: usize| -> (usize, usize) {
        let base = extent / blocks;
        let rem = extent % blocks;
        let start = b * base + rem.saturating_sub(blocks - b);
        let len = base + usize::from(b >= blocks - rem);
        (start, start + len)
    };

    let mut points = Vec::new();
    let mut candidates = Vec::new();
    for br in 0..rows {
        let (r0, r1) = bounds(h, rows, br);
        for bc in 0..cols {
            let (c0, c1) = bounds(w, cols, bc);
            candidates.clear();
            for row in r0..r1 {
                for col in c0..c1 {
                    if gt.is_valid(row, col) && pred.is_valid(row, col) {
                        candidates.push((row, col));
                    }
                }
            }
            if candidates.is_empty() {
                continue;
            }
            let (row, col) = candidates[rng.random_range(0..candidates.len())];
            points.push(SamplePoint {
                row,
                col,
                depth_gt: gt.get(row, col),
                depth_pred: pred.get(row, col),
            });
        }
    }
    Ok(points)
}

/// Ground-truth ordinal relation between two depths.
///
/// Returns 0 when the relative gap `|d1 - d2| / max(d1, d2)` is below
/// `tau`, otherwise +1 if `d1` is larger and -1 if `d2` is larger.
pub fn ordinal_relation(d1: f64, d2: f64, tau: f64) -> Result<i8> {
    for d in [d1, d2] {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::NonPositiveDepth(d));
        }
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "ratio threshold must be finite and non-negative, got {tau}"
        )));
    }
    let ratio = (d1 - d2).abs() / d1.max(d2);
    Ok(if ratio < tau {
        0
    } else if d1 > d2 {
        1
    } else if d1 < d2 {
        -1
    } else {
        0
    })
}

/// Expands a point list into all unordered pairs with their ground-truth
/// ordinal relations.
pub fn ordinal_pairs(points: &[SamplePoint], tau: f64) -> Result<Vec<OrdinalPair>> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let mut pairs = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            pairs.push(OrdinalPair {
                a: points[i],
                b: points[j],
                relation: ordinal_relation(points[i].depth_gt, points[j].depth_gt, tau)?,
            });
        }
    }
    Ok(pairs)
}

/// Numerically stable `log(1 + exp(z))`.
#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Numerically stable logistic function.
#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Focal ordinal ranking loss over all unordered point pairs.
///
/// For a pair with ground-truth relation `r != 0` the term is
/// `w^gamma * log(1 + exp(-r (p1 - p2)))` on the predicted depths, where
/// `w = sigmoid(-r (p1 - p2))` down-weights pairs the prediction already
/// orders correctly. Ties (`r = 0`) contribute the squared predicted
/// difference. The result is the mean over all pairs.
pub fn gfrl(points: &[SamplePoint], gamma: f64, tau: f64) -> Result<f64> {
    gfrl_core(points, gamma, tau, None)
}

/// [`gfrl`] plus its gradient with respect to each point's predicted depth.
pub fn gfrl_with_grad(points: &[SamplePoint], gamma: f64, tau: f64) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; points.len()];
    let value = gfrl_core(points, gamma, tau, Some(&mut grad))?;
    Ok((value, grad))
}

fn gfrl_core(
    points: &[SamplePoint],
    gamma: f64,
    tau: f64,
    mut grad: Option<&mut Vec<f64>>,
) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "focusing exponent must be finite and non-negative, got {gamma}"
        )));
    }
    let pair_count = (points.len() * (points.len() - 1) / 2) as f64;
    let mut sum = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let a = &points[i];
            let b = &points[j];
            let r = ordinal_relation(a.depth_gt, b.depth_gt, tau)?;
            let diff = a.depth_pred - b.depth_pred;
            let (term, dterm_ddiff) = if r == 0 {
                (diff * diff, 2.0 * diff)
            } else {
                let z = -f64::from(r) * diff;
                let w = sigmoid(z);
                let sp = softplus(z);
                let wg = if gamma == 0.0 { 1.0 } else { w.powf(gamma) };
                // d/dz [w^g * sp] = w^g * (g (1 - w) sp + w), dz/ddiff = -r.
                let dz = wg * (gamma * (1.0 - w) * sp + w);
                (wg * sp, -f64::from(r) * dz)
            };
            sum += term;
            if let Some(grad) = grad.as_deref_mut() {
                grad[i] += dterm_ddiff / pair_count;
                grad[j] -= dterm_ddiff / pair_count;
            }
        }
    }
    Ok(sum / pair_count)
}

/// Plain ranking loss without the focal factor: the mean over all
/// unordered pairs of `log(1 + exp(-r (p1 - p2)))` for ordered relations
/// and the squared predicted difference for ties.
///
/// [`gfrl`] with a focusing exponent of zero evaluates to exactly this.
pub fn relative_loss(points: &[SamplePoint], tau: f64) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    let pair_count = (points.len() * (points.len() - 1) / 2) as f64;
    let mut sum = 0.0;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let a = &points[i];
            let b = &points[j];
            let r = ordinal_relation(a.depth_gt, b.depth_gt, tau)?;
            let diff = a.depth_pred - b.depth_pred;
            sum += if r == 0 {
                diff * diff
            } else {
                softplus(-f64::from(r) * diff)
            };
        }
    }
    Ok(sum / pair_count)
}

/// Staged total loss combining all four terms.
///
/// Every component is evaluated and reported; the stage selects which enter
/// the weighted total (stage I only the residual term, stage II adds the
/// gradient term, stage III all four). Edge weights apply to the residual
/// term, and to the gradient/normal terms too when
/// `config.weight_all_pixel_losses` is set.
pub fn total_loss<R: Rng + ?Sized>(
    pred: &DepthMap,
    gt: &DepthMap,
    stage: StageId,
    config: &TotalLossConfig,
    edge_weights: Option<&WeightMask>,
    rng: &mut R,
) -> Result<LossBreakdown> {
    if config.lambdas.iter().any(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "stage weights must be finite, got {:?}",
            config.lambdas
        )));
    }
    let pixel_weights = if config.weight_all_pixel_losses {
        edge_weights
    } else {
        None
    };
    let berhu_term = berhu(pred, gt, edge_weights)?;
    let gradient_term = gradient_core(pred, gt, &config.spacings, pixel_weights, None)?;
    let normal_term = normal_core(pred, gt, pixel_weights, None)?;
    let points = sample_grid_points(gt, pred, config.grid_rows, config.grid_cols, rng)?;
    let gfrl_term = gfrl(&points, config.gamma, config.tau)?;

    let [l1, l2, l3, l4] = config.lambdas;
    let total = match stage {
        StageId::I => l1 * berhu_term,
        StageId::II => l1 * berhu_term + l2 * gradient_term,
        StageId::III => {
            l1 * berhu_term + l2 * gradient_term + l3 * normal_term + l4 * gfrl_term
        }
    };
    Ok(LossBreakdown {
        berhu: berhu_term,
        gradient: gradient_term,
        normal: normal_term,
        gfrl: gfrl_term,
        total,
        stage,
        weights: config.lambdas,
    })
}
