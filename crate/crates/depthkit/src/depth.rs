//! Depth-map representation, validity handling, and surface normals.
//!
//! A [`DepthMap`] stores metric depth values on a row-major grid together
//! with a per-pixel validity mask. Sensor holes (zero, negative, or
//! non-finite readings) are marked invalid and excluded from every loss and
//! metric downstream.

use crate::par::map_indexed;
use crate::{Error, Result};

/// Per-pixel depth values in meters with a validity mask.
///
/// Invariants:
/// - `width >= 1`, `height >= 1`, `values` and `valid` hold
///   `width * height` entries in row-major order;
/// - every pixel marked valid holds a finite, strictly positive value;
/// - pixels with non-finite or non-positive values must be marked invalid,
///   and the canonical constructors store 0.0 at invalid pixels.
///
/// Constructors enforce the shape invariants. The per-pixel invariants are
/// enforced by [`DepthMap::from_values`], while [`DepthMap::from_parts`]
/// accepts an arbitrary mask so that [`DepthMap::validate`] can report
/// violations diagnostically.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// Builds a map from raw values, deriving validity as `finite && > 0`.
    ///
    /// Invalid entries are stored as 0.0, so two maps with the same valid
    /// content compare equal no matter what raw hole values they were built
    /// from, and serialization round-trips reproduce the map exactly.
    pub fn from_values(width: usize, height: usize, mut values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        for (v, ok) in values.iter_mut().zip(&valid) {
            if !ok {
                *v = 0.0;
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    /// Builds a map from raw values and an explicit validity mask.
    ///
    /// Only the shape is checked here; use [`DepthMap::validate`] to audit
    /// the per-pixel invariants.
    pub fn from_parts(
        width: usize,
        height: usize,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_dims(width, height, values.len())?;
        check_dims(width, height, valid.len())?;
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }

    /// Constant-valued map, fully valid for positive finite values.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::from_values(width, height, vec![value; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub(crate) fn idx(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[self.idx(row, col)]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[self.idx(row, col)]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    /// Number of valid pixels.
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Sets one pixel, keeping its validity consistent with the value.
    /// Values that cannot be valid depths are stored as 0.0.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        let i = self.idx(row, col);
        let ok = value.is_finite() && value > 0.0;
        self.values[i] = if ok { value } else { 0.0 };
        self.valid[i] = ok;
    }

    /// Marks one pixel as a hole, clearing its stored value to 0.0.
    pub fn invalidate(&mut self, row: usize, col: usize) {
        let i = self.idx(row, col);
        self.values[i] = 0.0;
        self.valid[i] = false;
    }

    /// Returns a copy with predictions capped at `max` meters.
    ///
    /// Used by benchmark-style evaluations that clamp predicted depth to the
    /// sensor range before computing metrics. Validity is unchanged.
    pub fn clamp_max(&self, max: f64) -> DepthMap {
        let values = self.values.iter().map(|v| v.min(max)).collect();
        DepthMap {
            width: self.width,
            height: self.height,
            values,
            valid: self.valid.clone(),
        }
    }

    /// Checks the per-pixel invariants and reports every violation.
    ///
    /// Returns an empty list iff the map is well formed. Pixels that hold a
    /// bad value but are already marked invalid are exempt.
    pub fn validate(&self) -> Vec<Violation> {
        let mut violations = Vec::new();
        for row in 0..self.height {
            for col in 0..self.width {
                let i = row * self.width + col;
                if !self.valid[i] {
                    continue;
                }
                let v = self.values[i];
                if !v.is_finite() {
                    violations.push(Violation::NonFiniteValue { row, col, value: v });
                } else if v <= 0.0 {
                    violations.push(Violation::NonPositiveValue { row, col, value: v });
                }
            }
        }
        violations
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::EmptyDimensions { width, height });
    }
    let expected = width * height;
    if len != expected {
        return Err(Error::LengthMismatch {
            len,
            width,
            height,
            expected,
        });
    }
    Ok(())
}

/// A single invariant violation found by [`DepthMap::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Pixel marked valid but holding a value `<= 0`.
    NonPositiveValue { row: usize, col: usize, value: f64 },
    /// Pixel marked valid but holding a NaN or infinite value.
    NonFiniteValue { row: usize, col: usize, value: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::NonPositiveValue { row, col, value } => write!(
                f,
                "pixel ({row}, {col}) marked valid but holds non-positive value {value}"
            ),
            Violation::NonFiniteValue { row, col, value } => write!(
                f,
                "pixel ({row}, {col}) marked valid but holds non-finite value {value}"
            ),
        }
    }
}

/// Boolean mask with the same shape as its source map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn all_false(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![false; width * height])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, bit: bool) {
        self.bits[row * self.width + col] = bit;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_true(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// True when every set pixel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.width == other.width
            && self.height == other.height
            && self
                .bits
                .iter()
                .zip(&other.bits)
                .all(|(a, b)| !*a || *b)
    }
}

/// Per-pixel loss weights produced by the edge-aware boundary mask.
///
/// Every weight is either 1.0 (plain pixel) or 5.0 (dilated edge band).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMask {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

/// Weight applied inside the dilated edge band.
pub const EDGE_WEIGHT: f64 = 5.0;
/// Weight applied everywhere else.
pub const BASE_WEIGHT: f64 = 1.0;

impl WeightMask {
    /// Builds the {1, 5} weight grid from an edge-band mask.
    pub fn from_edge_mask(mask: &BinaryMask) -> WeightMask {
        let weights = mask
            .bits()
            .iter()
            .map(|on| if *on { EDGE_WEIGHT } else { BASE_WEIGHT })
            .collect();
        WeightMask {
            width: mask.width,
            height: mask.height,
            weights,
        }
    }

    /// All-ones mask, equivalent to unweighted evaluation.
    pub fn ones(width: usize, height: usize) -> Result<Self> {
        check_dims(width, height, width * height)?;
        Ok(WeightMask {
            width,
            height,
            weights: vec![BASE_WEIGHT; width * height],
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.width + col]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Un-normalized surface normals `[-dx, -dy, 1]` derived from depth gradients.
///
/// The third component is identically 1, so the vector norm is at least 1 and
/// cosine similarities are always well defined. `valid` marks pixels whose
/// gradient stencil touched only valid depth samples.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    width: usize,
    height: usize,
    vectors: Vec<[f64; 3]>,
    valid: Vec<bool>,
}

impl NormalField {
    pub(crate) fn from_raw(
        width: usize,
        height: usize,
        vectors: Vec<[f64; 3]>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        check_dims(width, height, vectors.len())?;
        check_dims(width, height, valid.len())?;
        Ok(NormalField {
            width,
            height,
            vectors,
            valid,
        })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        self.vectors[row * self.width + col]
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }
}

/// Forward-difference depth gradients at one pixel.
///
/// `dx` runs along columns, `dy` along rows. At the last column/row the
/// forward difference does not exist, so the gradient from the previous
/// column/row is replicated, which keeps planar ramps exact up to the border.
/// Degenerate 1-pixel extents yield a zero gradient.
#[inline]
pub(crate) fn forward_gradients(map: &DepthMap, row: usize, col: usize) -> (f64, f64) {
    let w = map.width();
    let h = map.height();
    let dx = if w == 1 {
        0.0
    } else if col + 1 < w {
        map.get(row, col + 1) - map.get(row, col)
    } else {
        map.get(row, col) - map.get(row, col - 1)
    };
    let dy = if h == 1 {
        0.0
    } else if row + 1 < h {
        map.get(row + 1, col) - map.get(row, col)
    } else {
        map.get(row, col) - map.get(row - 1, col)
    };
    (dx, dy)
}

/// True when every depth sample touched by the gradient stencil at
/// `(row, col)` is valid.
#[inline]
pub(crate) fn gradient_stencil_valid(map: &DepthMap, row: usize, col: usize) -> bool {
    let w = map.width();
    let h = map.height();
    if !map.is_valid(row, col) {
        return false;
    }
    let x_ok = if w == 1 {
        true
    } else if col + 1 < w {
        map.is_valid(row, col + 1)
    } else {
        map.is_valid(row, col - 1)
    };
    let y_ok = if h == 1 {
        true
    } else if row + 1 < h {
        map.is_valid(row + 1, col)
    } else {
        map.is_valid(row - 1, col)
    };
    x_ok && y_ok
}

/// Computes the surface normal `[-dx, -dy, 1]` at every pixel.
///
/// Gradients use forward differences with the border scheme described on
/// [`forward_gradients`]. Pixels whose stencil touches an invalid depth
/// sample are flagged invalid in the result so callers can exclude them.
pub fn compute_normals(map: &DepthMap) -> NormalField {
    let w = map.width();
    let h = map.height();
    let rows: Vec<(Vec<[f64; 3]>, Vec<bool>)> = map_indexed(h, |row| {
        let mut vecs = Vec::with_capacity(w);
        let mut ok = Vec::with_capacity(w);
        for col in 0..w {
            let (dx, dy) = forward_gradients(map, row, col);
            vecs.push([-dx, -dy, 1.0]);
            ok.push(gradient_stencil_valid(map, row, col));
        }
        (vecs, ok)
    });
    let mut vectors = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for (v, ok) in rows {
        vectors.extend(v);
        valid.extend(ok);
    }
    NormalField::from_raw(w, h, vectors, valid).expect("shape is consistent by construction")
}
