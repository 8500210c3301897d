//! Global context block: softmax attention pooling followed by a bottleneck
//! transform whose output is added to every spatial position.
//!
//! For input `x` of shape `C x H x W`:
//!
//! ```text
//! k       = key_kernel . x                  (1x1 conv -> H x W logits)
//! alpha   = softmax over all H*W positions
//! context = sum_p alpha_p * x[:, p]          (C-vector)
//! t       = up(ReLU(LayerNorm(down(context))))
//! out     = x + t (broadcast over positions)
//! ```
//!
//! The layer norm runs over the `C/ratio` bottleneck entries with biased
//! variance and epsilon 1e-5.

use super::{check_finite, FeatureGrid};
use crate::{Error, Result};

/// Layer-norm stabilizer inside the bottleneck transform.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Weights of one global context block.
///
/// `transform_down` is `(C/ratio) x C` row-major, `transform_up` is
/// `C x (C/ratio)` row-major; neither carries a bias (the layer norm's
/// shift plays that role).
#[derive(Debug, Clone, PartialEq)]
pub struct GcbParams {
    pub channels: usize,
    pub ratio: usize,
    pub key_kernel: Vec<f64>,
    pub transform_down: Vec<f64>,
    pub transform_up: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

impl GcbParams {
    /// All-zero parameters (scale included) of the right shapes.
    pub fn zeros(channels: usize, ratio: usize) -> Result<Self> {
        validate_dims(channels, ratio)?;
        let bottleneck = channels / ratio;
        Ok(GcbParams {
            channels,
            ratio,
            key_kernel: vec![0.0; channels],
            transform_down: vec![0.0; bottleneck * channels],
            transform_up: vec![0.0; channels * bottleneck],
            norm_scale: vec![0.0; bottleneck],
            norm_shift: vec![0.0; bottleneck],
        })
    }

    pub fn bottleneck(&self) -> usize {
        self.channels / self.ratio
    }

    fn validate(&self) -> Result<()> {
        validate_dims(self.channels, self.ratio)?;
        let b = self.bottleneck();
        let c = self.channels;
        if self.key_kernel.len() != c
            || self.transform_down.len() != b * c
            || self.transform_up.len() != c * b
            || self.norm_scale.len() != b
            || self.norm_shift.len() != b
        {
            return Err(Error::InvalidArgument(format!(
                "parameter shapes inconsistent with {c} channels at ratio {}",
                self.ratio
            )));
        }
        check_finite("key kernel", &self.key_kernel)?;
        check_finite("down transform", &self.transform_down)?;
        check_finite("up transform", &self.transform_up)?;
        check_finite("norm scale", &self.norm_scale)?;
        check_finite("norm shift", &self.norm_shift)
    }
}

fn validate_dims(channels: usize, ratio: usize) -> Result<()> {
    if channels == 0 || ratio == 0 || !channels.is_multiple_of(ratio) {
        return Err(Error::InvalidArgument(format!(
            "channel count {channels} must be a positive multiple of ratio {ratio}"
        )));
    }
    Ok(())
}

/// Forward state retained for [`gcb_backward`].
#[derive(Debug, Clone)]
pub struct GcbCache {
    x: FeatureGrid,
    alpha: Vec<f64>,
    context: Vec<f64>,
    /// Normalized bottleneck (`(down - mean) / std`), before scale/shift.
    xhat: Vec<f64>,
    inv_std: f64,
    /// Scale/shift outputs, the ReLU pre-activations.
    normed: Vec<f64>,
    /// ReLU outputs feeding the up transform.
    activated: Vec<f64>,
}

/// Gradients of a scalar objective with respect to the input and every
/// parameter of the block.
#[derive(Debug, Clone)]
pub struct GcbGrads {
    pub x: FeatureGrid,
    pub key_kernel: Vec<f64>,
    pub transform_down: Vec<f64>,
    pub transform_up: Vec<f64>,
    pub norm_scale: Vec<f64>,
    pub norm_shift: Vec<f64>,
}

fn check_input(x: &FeatureGrid, params: &GcbParams) -> Result<()> {
    params.validate()?;
    if x.channels() != params.channels {
        return Err(Error::InvalidArgument(format!(
            "input has {} channels, parameters expect {}",
            x.channels(),
            params.channels
        )));
    }
    Ok(())
}

fn forward_impl(x: &FeatureGrid, params: &GcbParams) -> Result<(FeatureGrid, GcbCache)> {
    check_input(x, params)?;
    let c = params.channels;
    let b = params.bottleneck();
    let h = x.height();
    let w = x.width();
    let positions = h * w;

    // Attention logits and stable softmax over all positions.
    let mut logits = vec![0.0; positions];
    for r in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for ch in 0..c {
                acc += params.key_kernel[ch] * x.get(ch, r, col);
            }
            logits[r * w + col] = acc;
        }
    }
    let max_logit = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let mut alpha: Vec<f64> = logits.iter().map(|l| (l - max_logit).exp()).collect();
    let z: f64 = alpha.iter().sum();
    for a in alpha.iter_mut() {
        *a /= z;
    }

    // Attention-pooled context vector.
    let mut context = vec![0.0; c];
    for (ch, ctx) in context.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..h {
            for col in 0..w {
                acc += alpha[r * w + col] * x.get(ch, r, col);
            }
        }
        *ctx = acc;
    }

    // Bottleneck transform: down, layer norm, ReLU, up.
    let down: Vec<f64> = params
        .transform_down
        .chunks_exact(c)
        .map(|row| row.iter().zip(&context).map(|(t, ctx)| t * ctx).sum())
        .collect();
    let mean = down.iter().sum::<f64>() / b as f64;
    let var = down.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / b as f64;
    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    let xhat: Vec<f64> = down.iter().map(|d| (d - mean) * inv_std).collect();
    let normed: Vec<f64> = (0..b)
        .map(|j| params.norm_scale[j] * xhat[j] + params.norm_shift[j])
        .collect();
    let activated: Vec<f64> = normed.iter().map(|n| n.max(0.0)).collect();

    let correction: Vec<f64> = params
        .transform_up
        .chunks_exact(b)
        .map(|row| row.iter().zip(&activated).map(|(t, a)| t * a).sum())
        .collect();

    let mut out = x.clone();
    for (ch, corr) in correction.iter().enumerate() {
        for r in 0..h {
            for col in 0..w {
                let i = out.idx(ch, r, col);
                out.data_mut()[i] += corr;
            }
        }
    }

    let cache = GcbCache {
        x: x.clone(),
        alpha,
        context,
        xhat,
        inv_std,
        normed,
        activated,
    };
    Ok((out, cache))
}

/// Runs the block: `x` plus a globally-pooled channel correction.
pub fn gcb_forward(x: &FeatureGrid, params: &GcbParams) -> Result<FeatureGrid> {
    Ok(forward_impl(x, params)?.0)
}

/// [`gcb_forward`] that additionally captures the state needed by
/// [`gcb_backward`].
pub fn gcb_forward_cached(x: &FeatureGrid, params: &GcbParams) -> Result<(FeatureGrid, GcbCache)> {
    forward_impl(x, params)
}

/// Exact reverse-mode gradients of [`gcb_forward`].
pub fn gcb_backward(params: &GcbParams, cache: &GcbCache, upstream: &FeatureGrid) -> Result<GcbGrads> {
    check_input(&cache.x, params)?;
    if !upstream.same_shape(&cache.x) {
        return Err(Error::InvalidArgument(format!(
            "upstream gradient shape {}x{}x{} does not match block output",
            upstream.channels(),
            upstream.height(),
            upstream.width()
        )));
    }
    let c = params.channels;
    let b = params.bottleneck();
    let h = cache.x.height();
    let w = cache.x.width();

    // Residual path plus the summed upstream feeding the correction.
    let mut g_x = upstream.clone();
    let mut g_correction = vec![0.0; c];
    for (ch, g) in g_correction.iter_mut().enumerate() {
        let mut acc = 0.0;
        for r in 0..h {
            for col in 0..w {
                acc += upstream.get(ch, r, col);
            }
        }
        *g = acc;
    }

    // Up transform.
    let mut g_up = vec![0.0; c * b];
    let mut g_activated = vec![0.0; b];
    for ch in 0..c {
        for j in 0..b {
            g_up[ch * b + j] = g_correction[ch] * cache.activated[j];
            g_activated[j] += g_correction[ch] * params.transform_up[ch * b + j];
        }
    }

    // ReLU (subgradient 0 at exactly zero) and scale/shift.
    let mut g_scale = vec![0.0; b];
    let mut g_shift = vec![0.0; b];
    let mut g_xhat = vec![0.0; b];
    for j in 0..b {
        let g_normed = if cache.normed[j] > 0.0 { g_activated[j] } else { 0.0 };
        g_scale[j] = g_normed * cache.xhat[j];
        g_shift[j] = g_normed;
        g_xhat[j] = g_normed * params.norm_scale[j];
    }

    // Layer norm over the bottleneck, biased variance.
    let mean_gx: f64 = g_xhat.iter().sum::<f64>() / b as f64;
    let mean_gx_xhat: f64 = g_xhat
        .iter()
        .zip(&cache.xhat)
        .map(|(g, xh)| g * xh)
        .sum::<f64>()
        / b as f64;
    let g_down: Vec<f64> = (0..b)
        .map(|j| cache.inv_std * (g_xhat[j] - mean_gx - cache.xhat[j] * mean_gx_xhat))
        .collect();

    // Down transform.
    let mut g_down_w = vec![0.0; b * c];
    let mut g_context = vec![0.0; c];
    for j in 0..b {
        for ch in 0..c {
            g_down_w[j * c + ch] = g_down[j] * cache.context[ch];
            g_context[ch] += g_down[j] * params.transform_down[j * c + ch];
        }
    }

    // Attention pooling: context = sum_p alpha_p x[:, p].
    let positions = h * w;
    let mut g_alpha = vec![0.0; positions];
    for (p, ga) in g_alpha.iter_mut().enumerate() {
        let (r, col) = (p / w, p % w);
        let mut acc = 0.0;
        for (ch, gc) in g_context.iter().enumerate() {
            acc += gc * cache.x.get(ch, r, col);
            let i = g_x.idx(ch, r, col);
            g_x.data_mut()[i] += gc * cache.alpha[p];
        }
        *ga = acc;
    }

    // Softmax.
    let dot: f64 = g_alpha
        .iter()
        .zip(&cache.alpha)
        .map(|(g, a)| g * a)
        .sum();
    let g_logits: Vec<f64> = (0..positions)
        .map(|p| cache.alpha[p] * (g_alpha[p] - dot))
        .collect();

    // Key kernel.
    let mut g_key = vec![0.0; c];
    for (p, gl) in g_logits.iter().enumerate() {
        let (r, col) = (p / w, p % w);
        for (ch, gk) in g_key.iter_mut().enumerate() {
            *gk += gl * cache.x.get(ch, r, col);
            let i = g_x.idx(ch, r, col);
            g_x.data_mut()[i] += gl * params.key_kernel[ch];
        }
    }

    Ok(GcbGrads {
        x: g_x,
        key_kernel: g_key,
        transform_down: g_down_w,
        transform_up: g_up,
        norm_scale: g_scale,
        norm_shift: g_shift,
    })
}
