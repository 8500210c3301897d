//! Desk-scale forward and backward passes of the two attention blocks.
//!
//! The spatial attention block ([`sab_forward`]) fuses decoder features with
//! recalibrated skip features through a learned 2D attention map; the global
//! context block ([`gcb_forward`]) pools a global context vector with
//! softmax attention and adds a channel-wise correction everywhere. Both
//! come with exact reverse-mode backward passes so their math can be
//! verified against finite differences (see the `gradcheck` module).
//!
//! Grids are single `C x H x W` tensors; batching is the caller's loop.

mod gcb;
mod sab;

pub use gcb::{
    gcb_backward, gcb_forward, gcb_forward_cached, GcbCache, GcbGrads, GcbParams, LAYER_NORM_EPS,
};
pub use sab::{sab_backward, sab_forward, sab_forward_cached, SabCache, SabGrads, SabParams};

use crate::gradcheck::{check_gcb, check_sab, GradCheckReport};
use crate::{Error, Result};

/// Dense `C x H x W` feature tensor in channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl FeatureGrid {
    /// Builds a grid, rejecting empty shapes, length mismatches, and
    /// non-finite entries.
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature grid shape {channels}x{height}x{width} has a zero extent"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "feature grid data holds {} entries, shape {channels}x{height}x{width} needs {expected}",
                data.len()
            )));
        }
        check_finite("feature grid", &data)?;
        Ok(FeatureGrid {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(channels, height, width, vec![0.0; channels * height * width])
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn idx(&self, channel: usize, row: usize, col: usize) -> usize {
        debug_assert!(channel < self.channels && row < self.height && col < self.width);
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.idx(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.idx(channel, row, col);
        self.data[i] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn same_shape(&self, other: &FeatureGrid) -> bool {
        self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }
}

pub(crate) fn check_finite(name: &str, data: &[f64]) -> Result<()> {
    for (i, v) in data.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{name} entry {i} is not finite ({v})"
            )));
        }
    }
    Ok(())
}

/// Which block a verification run targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Sab,
    Gcb,
}

/// Verifies one block's backward pass against central finite differences on
/// seeded random inputs, returning the worst relative discrepancy found.
pub fn gradcheck(block: BlockKind, seed: u64, epsilon: f64) -> Result<GradCheckReport> {
    match block {
        BlockKind::Sab => check_sab(seed, epsilon),
        BlockKind::Gcb => check_gcb(seed, epsilon),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_bad_shapes_and_values() {
        assert!(FeatureGrid::new(0, 2, 2, vec![]).is_err());
        assert!(FeatureGrid::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureGrid::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(FeatureGrid::new(1, 1, 2, vec![0.0, f64::INFINITY]).is_err());
        assert!(FeatureGrid::new(1, 1, 2, vec![0.0, -3.5]).is_ok());
    }

    #[test]
    fn grid_layout_is_channel_major() {
        let grid = FeatureGrid::new(2, 2, 3, (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(grid.get(0, 0, 0), 0.0);
        assert_eq!(grid.get(0, 1, 2), 5.0);
        assert_eq!(grid.get(1, 0, 0), 6.0);
        assert_eq!(grid.get(1, 1, 1), 10.0);
    }
}
