//! Numerical building blocks for structure-aware monocular depth estimation.
//!
//! The crate covers the machinery that surrounds a depth-estimation network
//! without containing the network itself:
//!
//! - [`depth`]: depth-map representation with per-pixel validity, surface
//!   normals, and input validation.
//! - [`edges`]: Canny edge detection on depth values, morphological dilation,
//!   and the edge-aware boundary weight mask.
//! - [`losses`]: BerHu, scale-invariant gradient, normal, and global focal
//!   relative losses, with hand-derived analytic gradients and staged totals.
//! - [`metrics`]: REL / RMSE / log10 / delta threshold evaluation metrics.
//! - [`blocks`]: desk-scale forward and backward passes of the spatial
//!   attention block and the global context block.
//! - [`gradcheck`]: central finite-difference verification of every analytic
//!   gradient in the crate.
//! - [`mixer`]: curriculum dataset-mixing sampler with balanced per-image
//!   probabilities and plateau-triggered stage advancement.
//! - [`io`]: bit-exact PFM and 16-bit PGM readers/writers.
//!
//! All operations are pure functions of their inputs. With the default
//! `parallel` feature the per-pixel kernels run on rayon; disabling it
//! selects a sequential fallback that produces bit-identical results.

pub mod blocks;
pub mod depth;
pub mod edges;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod mixer;

mod par;

pub use depth::{BinaryMask, DepthMap, NormalField, WeightMask};

/// Errors shared across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("width and height must be at least 1 (got {width}x{height})")]
    EmptyDimensions { width: usize, height: usize },
    #[error("buffer of length {len} does not match {width}x{height} = {expected} entries")]
    LengthMismatch {
        len: usize,
        width: usize,
        height: usize,
        expected: usize,
    },
    #[error("shape mismatch: {lhs_width}x{lhs_height} vs {rhs_width}x{rhs_height}")]
    ShapeMismatch {
        lhs_width: usize,
        lhs_height: usize,
        rhs_width: usize,
        rhs_height: usize,
    },
    #[error("no jointly valid pixels (empty overlap)")]
    EmptyOverlap,
    #[error("dilation kernel must be odd and at least 1, got {0}")]
    BadKernel(usize),
    #[error("invalid Canny thresholds: low={low}, high={high} (need 0 <= low <= high)")]
    BadThresholds { low: f64, high: f64 },
    #[error("depth must be positive, got {0}")]
    NonPositiveDepth(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("need at least 2 sample points, got {0}")]
    TooFewPoints(usize),
    #[error("image of {width}x{height} cannot be partitioned into a {rows}x{cols} grid")]
    GridTooFine {
        width: usize,
        height: usize,
        rows: usize,
        cols: usize,
    },
    #[error("parse error at byte {offset}: {reason}")]
    Parse { offset: usize, reason: String },
    #[error("dataset spec error: {0}")]
    DatasetSpec(String),
    #[error("no dataset is active in the current curriculum stage")]
    NoActiveDataset,
}

impl Error {
    pub(crate) fn parse(offset: usize, reason: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_same_shape(
    lw: usize,
    lh: usize,
    rw: usize,
    rh: usize,
) -> Result<()> {
    if lw != rw || lh != rh {
        return Err(Error::ShapeMismatch {
            lhs_width: lw,
            lhs_height: lh,
            rhs_width: rw,
            rhs_height: rh,
        });
    }
    Ok(())
}
