//! Spatial attention block: gates skip features with a learned 2D map
//! before fusing them with the decoder features.
//!
//! Forward dataflow for inputs `d_next` (decoder features) and `gcb_feat`
//! (recalibrated skip features), both `C x H x W`:
//!
//! ```text
//! concat = [d_next ; gcb_feat]                  (2C channels)
//! A      = ReLU(squeeze(concat))                (1x1 conv -> H x W map)
//! gated  = gcb_feat * A                         (broadcast over channels)
//! out    = fuse([gated ; d_next])               (3x3 conv, zero pad 1 -> C)
//! ```

use super::{check_finite, FeatureGrid};
use crate::{Error, Result};

/// Weights of one spatial attention block for a fixed channel count.
///
/// `squeeze_weight` holds the 1x1 convolution taking the 2C-channel concat
/// to the single-channel attention pre-activation. `fuse_weight` holds the
/// 3x3 convolution taking the 2C-channel gated concat back to C channels,
/// laid out as `[out_channel][in_channel][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SabParams {
    pub channels: usize,
    pub squeeze_weight: Vec<f64>,
    pub squeeze_bias: f64,
    pub fuse_weight: Vec<f64>,
    pub fuse_bias: Vec<f64>,
}

impl SabParams {
    /// All-zero parameters of the right shapes.
    pub fn zeros(channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument(
                "channel count must be positive".into(),
            ));
        }
        Ok(SabParams {
            channels,
            squeeze_weight: vec![0.0; 2 * channels],
            squeeze_bias: 0.0,
            fuse_weight: vec![0.0; channels * 2 * channels * 9],
            fuse_bias: vec![0.0; channels],
        })
    }

    fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 {
            return Err(Error::InvalidArgument(
                "channel count must be positive".into(),
            ));
        }
        if self.squeeze_weight.len() != 2 * c
            || self.fuse_weight.len() != c * 2 * c * 9
            || self.fuse_bias.len() != c
        {
            return Err(Error::InvalidArgument(format!(
                "parameter shapes inconsistent with {c} channels: squeeze {}, fuse {}, bias {}",
                self.squeeze_weight.len(),
                self.fuse_weight.len(),
                self.fuse_bias.len()
            )));
        }
        check_finite("squeeze weight", &self.squeeze_weight)?;
        check_finite("squeeze bias", std::slice::from_ref(&self.squeeze_bias))?;
        check_finite("fuse weight", &self.fuse_weight)?;
        check_finite("fuse bias", &self.fuse_bias)
    }

    #[inline]
    fn fuse_w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> f64 {
        self.fuse_weight[((oc * 2 * self.channels + ic) * 3 + ky) * 3 + kx]
    }
}

/// Forward state retained for [`sab_backward`].
#[derive(Debug, Clone)]
pub struct SabCache {
    d_next: FeatureGrid,
    gcb_feat: FeatureGrid,
    /// Attention pre-activations, before the ReLU.
    pre: Vec<f64>,
    /// Attention map after the ReLU.
    att: Vec<f64>,
}

/// Gradients of a scalar objective with respect to every input and
/// parameter of the block.
#[derive(Debug, Clone)]
pub struct SabGrads {
    pub d_next: FeatureGrid,
    pub gcb_feat: FeatureGrid,
    pub squeeze_weight: Vec<f64>,
    pub squeeze_bias: f64,
    pub fuse_weight: Vec<f64>,
    pub fuse_bias: Vec<f64>,
}

fn check_inputs(
    d_next: &FeatureGrid,
    gcb_feat: &FeatureGrid,
    params: &SabParams,
) -> Result<()> {
    params.validate()?;
    if !d_next.same_shape(gcb_feat) {
        return Err(Error::ShapeMismatch {
            lhs_width: d_next.width(),
            lhs_height: d_next.height(),
            rhs_width: gcb_feat.width(),
            rhs_height: gcb_feat.height(),
        });
    }
    if d_next.channels() != params.channels {
        return Err(Error::InvalidArgument(format!(
            "inputs have {} channels, parameters expect {}",
            d_next.channels(),
            params.channels
        )));
    }
    Ok(())
}

/// 2C-channel view of `[d_next ; gcb_feat]` without materializing it.
#[inline]
fn concat_get(d_next: &FeatureGrid, gcb_feat: &FeatureGrid, ic: usize, r: usize, c: usize) -> f64 {
    let ch = d_next.channels();
    if ic < ch {
        d_next.get(ic, r, c)
    } else {
        gcb_feat.get(ic - ch, r, c)
    }
}

fn forward_impl(
    d_next: &FeatureGrid,
    gcb_feat: &FeatureGrid,
    params: &SabParams,
) -> Result<(FeatureGrid, Vec<f64>, Vec<f64>)> {
    check_inputs(d_next, gcb_feat, params)?;
    let ch = params.channels;
    let h = d_next.height();
    let w = d_next.width();

    // Squeeze: 1x1 conv over the 2C-channel concat, then ReLU.
    let mut pre = vec![0.0; h * w];
    let mut att = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let mut acc = params.squeeze_bias;
            for ic in 0..2 * ch {
                acc += params.squeeze_weight[ic] * concat_get(d_next, gcb_feat, ic, r, c);
            }
            pre[r * w + c] = acc;
            att[r * w + c] = acc.max(0.0);
        }
    }

    // Fuse: 3x3 conv with zero padding over [gcb_feat * A ; d_next].
    let gated_concat = |ic: usize, r: usize, c: usize| -> f64 {
        if ic < ch {
            gcb_feat.get(ic, r, c) * att[r * w + c]
        } else {
            d_next.get(ic - ch, r, c)
        }
    };
    let mut out = FeatureGrid::zeros(ch, h, w)?;
    for oc in 0..ch {
        for r in 0..h {
            for c in 0..w {
                let mut acc = params.fuse_bias[oc];
                for ic in 0..2 * ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let rr = r as i64 + ky as i64 - 1;
                            let cc = c as i64 + kx as i64 - 1;
                            if rr < 0 || rr >= h as i64 || cc < 0 || cc >= w as i64 {
                                continue;
                            }
                            acc += params.fuse_w(oc, ic, ky, kx)
                                * gated_concat(ic, rr as usize, cc as usize);
                        }
                    }
                }
                out.set(oc, r, c, acc);
            }
        }
    }
    Ok((out, att, pre))
}

/// Runs the block, returning the fused features and the 2D attention map
/// in row-major order.
pub fn sab_forward(
    d_next: &FeatureGrid,
    gcb_feat: &FeatureGrid,
    params: &SabParams,
) -> Result<(FeatureGrid, Vec<f64>)> {
    let (out, att, _) = forward_impl(d_next, gcb_feat, params)?;
    Ok((out, att))
}

/// [`sab_forward`] that additionally captures the state needed by
/// [`sab_backward`].
pub fn sab_forward_cached(
    d_next: &FeatureGrid,
    gcb_feat: &FeatureGrid,
    params: &SabParams,
) -> Result<(FeatureGrid, Vec<f64>, SabCache)> {
    let (out, att, pre) = forward_impl(d_next, gcb_feat, params)?;
    let cache = SabCache {
        d_next: d_next.clone(),
        gcb_feat: gcb_feat.clone(),
        pre,
        att: att.clone(),
    };
    Ok((out, att, cache))
}

/// Exact reverse-mode gradients of [`sab_forward`].
///
/// `upstream` is the gradient of a scalar objective with respect to the
/// block output. The ReLU uses subgradient 0 at exactly zero
/// pre-activation.
pub fn sab_backward(
    params: &SabParams,
    cache: &SabCache,
    upstream: &FeatureGrid,
) -> Result<SabGrads> {
    check_inputs(&cache.d_next, &cache.gcb_feat, params)?;
    if upstream.channels() != params.channels
        || upstream.height() != cache.d_next.height()
        || upstream.width() != cache.d_next.width()
    {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient shape {}x{}x{} does not match block output",
            upstream.channels(),
            upstream.height(),
            upstream.width()
        )));
    }
    let ch = params.channels;
    let h = cache.d_next.height();
    let w = cache.d_next.width();
    let d_next = &cache.d_next;
    let gcb_feat = &cache.gcb_feat;

    let gated_concat = |ic: usize, r: usize, c: usize| -> f64 {
        if ic < ch {
            gcb_feat.get(ic, r, c) * cache.att[r * w + c]
        } else {
            d_next.get(ic - ch, r, c)
        }
    };

    let mut g_d_next = FeatureGrid::zeros(ch, h, w)?;
    let mut g_gcb = FeatureGrid::zeros(ch, h, w)?;
    let mut g_fuse_weight = vec![0.0; params.fuse_weight.len()];
    let mut g_fuse_bias = vec![0.0; ch];
    let mut g_gated_concat = vec![0.0; 2 * ch * h * w];

    // Through the fuse convolution.
    for (oc, gb) in g_fuse_bias.iter_mut().enumerate() {
        for r in 0..h {
            for c in 0..w {
                let u = upstream.get(oc, r, c);
                if u == 0.0 {
                    continue;
                }
                *gb += u;
                for ic in 0..2 * ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let rr = r as i64 + ky as i64 - 1;
                            let cc = c as i64 + kx as i64 - 1;
                            if rr < 0 || rr >= h as i64 || cc < 0 || cc >= w as i64 {
                                continue;
                            }
                            let (rr, cc) = (rr as usize, cc as usize);
                            let widx = ((oc * 2 * ch + ic) * 3 + ky) * 3 + kx;
                            g_fuse_weight[widx] += u * gated_concat(ic, rr, cc);
                            g_gated_concat[(ic * h + rr) * w + cc] +=
                                u * params.fuse_w(oc, ic, ky, kx);
                        }
                    }
                }
            }
        }
    }

    // Split the gated concat: first C channels went through the gate, the
    // last C are d_next verbatim.
    let mut g_att = vec![0.0; h * w];
    for ic in 0..ch {
        for r in 0..h {
            for c in 0..w {
                let g = g_gated_concat[(ic * h + r) * w + c];
                let i = g_gcb.idx(ic, r, c);
                g_gcb.data_mut()[i] += g * cache.att[r * w + c];
                g_att[r * w + c] += g * gcb_feat.get(ic, r, c);
            }
        }
    }
    for ic in 0..ch {
        for r in 0..h {
            for c in 0..w {
                let g = g_gated_concat[((ch + ic) * h + r) * w + c];
                let i = g_d_next.idx(ic, r, c);
                g_d_next.data_mut()[i] += g;
            }
        }
    }

    // Through the ReLU and the squeeze convolution.
    let mut g_squeeze_weight = vec![0.0; 2 * ch];
    let mut g_squeeze_bias = 0.0;
    for r in 0..h {
        for c in 0..w {
            if cache.pre[r * w + c] <= 0.0 {
                continue;
            }
            let g_pre = g_att[r * w + c];
            g_squeeze_bias += g_pre;
            for (ic, gw) in g_squeeze_weight.iter_mut().enumerate() {
                *gw += g_pre * concat_get(d_next, gcb_feat, ic, r, c);
                let g_in = g_pre * params.squeeze_weight[ic];
                if ic < ch {
                    let i = g_d_next.idx(ic, r, c);
                    g_d_next.data_mut()[i] += g_in;
                } else {
                    let i = g_gcb.idx(ic - ch, r, c);
                    g_gcb.data_mut()[i] += g_in;
                }
            }
        }
    }

    Ok(SabGrads {
        d_next: g_d_next,
        gcb_feat: g_gcb,
        squeeze_weight: g_squeeze_weight,
        squeeze_bias: g_squeeze_bias,
        fuse_weight: g_fuse_weight,
        fuse_bias: g_fuse_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_grid(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureGrid {
        let data = (0..c * h * w).map(|_| rng.random_range(-2.0..2.0)).collect();
        FeatureGrid::new(c, h, w, data).unwrap()
    }

    fn random_params(rng: &mut ChaCha8Rng, c: usize) -> SabParams {
        SabParams {
            channels: c,
            squeeze_weight: (0..2 * c).map(|_| rng.random_range(-1.0..1.0)).collect(),
            squeeze_bias: rng.random_range(-1.0..1.0),
            fuse_weight: (0..c * 2 * c * 9)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
            fuse_bias: (0..c).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn single_pixel_hand_trace() {
        // d_next = [2], gcb = [3], squeeze weights (1, 1):
        // A = ReLU(2 + 3) = 5, gated = 15, center fuse weights (1, 1)
        // give out = 15 + 2 = 17.
        let d_next = FeatureGrid::new(1, 1, 1, vec![2.0]).unwrap();
        let gcb = FeatureGrid::new(1, 1, 1, vec![3.0]).unwrap();
        let mut params = SabParams::zeros(1).unwrap();
        params.squeeze_weight = vec![1.0, 1.0];
        // Center tap of the 3x3 kernel, flat layout (ch * 3 + ky) * 3 + kx
        // with (ky, kx) = (1, 1): index 4 for in-channel 0 (gated), 13 for
        // in-channel 1 (d_next).
        params.fuse_weight[4] = 1.0;
        params.fuse_weight[13] = 1.0;
        let (out, att) = sab_forward(&d_next, &gcb, &params).unwrap();
        assert_eq!(att, vec![5.0]);
        assert_eq!(out.data(), &[17.0]);
    }

    #[test]
    fn zero_squeeze_gives_zero_attention_and_ignores_gcb() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let d_next = random_grid(&mut rng, 2, 4, 5);
        let gcb = random_grid(&mut rng, 2, 4, 5);
        let mut params = random_params(&mut rng, 2);
        params.squeeze_weight = vec![0.0; 4];
        params.squeeze_bias = 0.0;

        let (out, att) = sab_forward(&d_next, &gcb, &params).unwrap();
        assert!(att.iter().all(|a| *a == 0.0));

        // With the gate closed the skip features cannot reach the output.
        let zeros = FeatureGrid::zeros(2, 4, 5).unwrap();
        let (out_no_gcb, _) = sab_forward(&d_next, &zeros, &params).unwrap();
        assert_eq!(out, out_no_gcb);
    }

    #[test]
    fn zero_gate_blocks_gradient_to_gcb() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d_next = random_grid(&mut rng, 2, 3, 3);
        let gcb = random_grid(&mut rng, 2, 3, 3);
        let mut params = random_params(&mut rng, 2);
        params.squeeze_weight = vec![0.0; 4];
        params.squeeze_bias = 0.0;
        let (_, _, cache) = sab_forward_cached(&d_next, &gcb, &params).unwrap();
        let upstream = random_grid(&mut rng, 2, 3, 3);
        let grads = sab_backward(&params, &cache, &upstream).unwrap();
        assert!(grads.gcb_feat.data().iter().all(|g| *g == 0.0));
        assert!(grads.d_next.data().iter().any(|g| *g != 0.0));
    }

    #[test]
    fn attention_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        for _ in 0..10 {
            let c = rng.random_range(1..4);
            let h = rng.random_range(1..6);
            let w = rng.random_range(1..6);
            let d_next = random_grid(&mut rng, c, h, w);
            let gcb = random_grid(&mut rng, c, h, w);
            let params = random_params(&mut rng, c);
            let (out, att) = sab_forward(&d_next, &gcb, &params).unwrap();
            assert_eq!(att.len(), h * w);
            assert!(att.iter().all(|a| *a >= 0.0));
            assert_eq!(
                (out.channels(), out.height(), out.width()),
                (c, h, w),
                "output keeps the input shape"
            );
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let d_next = random_grid(&mut rng, 3, 4, 4);
        let gcb = random_grid(&mut rng, 3, 4, 4);
        let params = random_params(&mut rng, 3);
        let (_, _, cache) = sab_forward_cached(&d_next, &gcb, &params).unwrap();
        let upstream = FeatureGrid::zeros(3, 4, 4).unwrap();
        let grads = sab_backward(&params, &cache, &upstream).unwrap();
        assert!(grads.d_next.data().iter().all(|g| *g == 0.0));
        assert!(grads.gcb_feat.data().iter().all(|g| *g == 0.0));
        assert!(grads.squeeze_weight.iter().all(|g| *g == 0.0));
        assert_eq!(grads.squeeze_bias, 0.0);
        assert!(grads.fuse_weight.iter().all(|g| *g == 0.0));
        assert!(grads.fuse_bias.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let a = FeatureGrid::zeros(2, 3, 3).unwrap();
        let b = FeatureGrid::zeros(2, 3, 4).unwrap();
        let params = SabParams::zeros(2).unwrap();
        assert!(sab_forward(&a, &b, &params).is_err());
        let c = FeatureGrid::zeros(3, 3, 3).unwrap();
        assert!(sab_forward(&c, &c, &params).is_err());
    }
}
