pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod mask;
pub mod normals;
pub mod sample;

/// clap value parser for strictly positive finite reals.
pub fn positive_f64(text: &str) -> Result<f64, String> {
    let value: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(format!("must be positive and finite, got {value}"))
    }
}

/// clap value parser for finite reals that may be zero.
pub fn non_negative_f64(text: &str) -> Result<f64, String> {
    let value: f64 = text.parse().map_err(|e| format!("{e}"))?;
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(format!("must be non-negative and finite, got {value}"))
    }
}

/// clap value parser for odd dilation kernel widths.
pub fn odd_kernel(text: &str) -> Result<usize, String> {
    let value: usize = text.parse().map_err(|e| format!("{e}"))?;
    if value % 2 == 1 {
        Ok(value)
    } else {
        Err(format!("kernel width must be odd, got {value}"))
    }
}
