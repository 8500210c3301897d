use anyhow::{Context, Result};
use clap::Args;
use depthkit::depth::compute_normals;
use depthkit::io::write_pfm_normals;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use super::positive_f64;
use crate::pairing::load_depth;

/// Derives the un-normalized surface-normal field [-dx, -dy, 1] of a depth
/// map and writes it as a 3-channel PFM. Pixels whose gradient stencil
/// touches a hole come out as (0, 0, 0) and are marked invalid on re-read.
#[derive(Args)]
pub struct NormalsArgs {
    /// Input depth map (.pfm or .pgm)
    #[arg(long)]
    pub gt: PathBuf,
    /// Meters per 16-bit PGM unit
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub pgm_scale: f64,
    /// Output PFM path
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: NormalsArgs) -> Result<ExitCode> {
    let gt = load_depth(&args.gt, args.pgm_scale)?;
    let field = compute_normals(&gt);
    let encoded = write_pfm_normals(&field);
    fs::write(&args.out, encoded)
        .with_context(|| format!("writing {}", args.out.display()))?;
    println!(
        "wrote {} ({}x{} normal field)",
        args.out.display(),
        field.width(),
        field.height()
    );
    Ok(ExitCode::SUCCESS)
}
