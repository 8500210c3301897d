use anyhow::{Context, Result};
use clap::Args;
use depthkit::depth::EDGE_WEIGHT;
use depthkit::edges::{auto_thresholds, canny_edges, dilate};
use depthkit::io::write_pgm8;
use depthkit::WeightMask;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use super::{non_negative_f64, odd_kernel, positive_f64};
use crate::pairing::load_depth;

/// Detects depth boundaries in one map, dilates them, and writes the weight
/// mask as a binary 8-bit PGM: 255 inside the boundary band, 0 elsewhere.
/// Without explicit thresholds the hysteresis pair is derived from the
/// map's own gradient range.
#[derive(Args)]
pub struct MaskArgs {
    /// Ground-truth depth map (.pfm or .pgm)
    #[arg(long)]
    pub gt: PathBuf,
    /// Low hysteresis threshold on the smoothed depth gradient
    #[arg(long, requires = "high", value_parser = non_negative_f64)]
    pub low: Option<f64>,
    /// High hysteresis threshold
    #[arg(long, requires = "low", value_parser = non_negative_f64)]
    pub high: Option<f64>,
    /// Width of the square dilation kernel (odd)
    #[arg(long, default_value_t = 5, value_parser = odd_kernel)]
    pub kernel: usize,
    /// Meters per 16-bit PGM unit
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub pgm_scale: f64,
    /// Output PGM path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: MaskArgs) -> Result<ExitCode> {
    let gt = load_depth(&args.gt, args.pgm_scale)?;
    let (low, high) = match (args.low, args.high) {
        (Some(low), Some(high)) => (low, high),
        _ => auto_thresholds(&gt),
    };
    let edges = canny_edges(&gt, low, high)?;
    let band = dilate(&edges, args.kernel)?;
    let mask = WeightMask::from_edge_mask(&band);

    let bytes: Vec<u8> = mask
        .weights()
        .iter()
        .map(|w| if *w == EDGE_WEIGHT { 255 } else { 0 })
        .collect();
    let boundary = bytes.iter().filter(|b| **b == 255).count();
    let encoded = write_pgm8(gt.width(), gt.height(), &bytes)?;
    fs::write(&args.out, encoded)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({} boundary pixels of {}, thresholds {low:.6}/{high:.6}, kernel {})",
        args.out.display(),
        boundary,
        bytes.len(),
        args.kernel
    );
    Ok(ExitCode::SUCCESS)
}
