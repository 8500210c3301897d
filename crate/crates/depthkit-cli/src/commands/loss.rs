use anyhow::{bail, Result};
use clap::Args;
use depthkit::edges::{auto_thresholds, boundary_weight_mask};
use depthkit::losses::{
    total_loss, LossBreakdown, StageId, TotalLossConfig, DEFAULT_GAMMA, DEFAULT_TAU,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use super::{non_negative_f64, positive_f64};
use crate::pairing::{collect_pairs, load_depth, process_pairs, stem_seed, Pair};
use crate::report::{write_json, Report};

/// Evaluates the four-term training loss on each file pair. Each file draws
/// its ranking points from its own stream, derived from --seed and the file
/// stem, so reports do not depend on how files are scheduled. The aggregate
/// is the arithmetic mean of each component over the successful pairs.
#[derive(Args)]
pub struct LossArgs {
    /// Predicted depth: a .pfm/.pgm file or a directory of them
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a file or directory pairing with --pred by stem
    #[arg(long)]
    pub gt: PathBuf,
    /// Training stage: 1 = residual only, 2 = + gradient, 3 = all four terms
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stage: u8,
    /// Focusing exponent of the ranking term
    #[arg(long, default_value_t = DEFAULT_GAMMA, value_parser = non_negative_f64)]
    pub gamma: f64,
    /// Depth-ratio threshold under which two ranking points count as ties
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = positive_f64)]
    pub tau: f64,
    /// Weight residuals near ground-truth depth boundaries 5x
    #[arg(long)]
    pub edge_weights: bool,
    /// Base seed for the ranking-loss point sampler
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Meters per 16-bit PGM unit
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub pgm_scale: f64,
    /// Write the JSON run report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct LossParams {
    pred: String,
    gt: String,
    stage: u8,
    gamma: f64,
    tau: f64,
    edge_weights: bool,
    pgm_scale: f64,
    lambdas: [f64; 4],
    spacings: Vec<usize>,
    grid: [usize; 2],
}

#[derive(Serialize)]
struct FileResult {
    name: String,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    losses: Option<LossBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct LossAggregate {
    berhu: f64,
    gradient: f64,
    normal: f64,
    gfrl: f64,
    total: f64,
    files: usize,
}

#[derive(Serialize)]
struct LossBody {
    files: Vec<FileResult>,
    aggregate: Option<LossAggregate>,
}

fn loss_pair(
    pair: &Pair,
    args: &LossArgs,
    stage: StageId,
    config: &TotalLossConfig,
    file_seed: u64,
) -> Result<LossBreakdown> {
    let pred = load_depth(&pair.pred, args.pgm_scale)?;
    let gt = load_depth(&pair.gt, args.pgm_scale)?;

    // Spacings that do not fit this image are dropped rather than failing
    // the whole pair; tiny maps still get the finer ones.
    let mut cfg = config.clone();
    let extent = gt.width().max(gt.height());
    cfg.spacings.retain(|s| *s < extent);
    if cfg.spacings.is_empty() {
        bail!("image {}x{} is too small for any gradient spacing", gt.width(), gt.height());
    }

    let weights = if args.edge_weights {
        let (low, high) = auto_thresholds(&gt);
        Some(boundary_weight_mask(&gt, low, high)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(file_seed);
    Ok(total_loss(&pred, &gt, stage, &cfg, weights.as_ref(), &mut rng)?)
}

fn mean_breakdown(results: &[FileResult]) -> Option<LossAggregate> {
    let done: Vec<&LossBreakdown> = results.iter().filter_map(|r| r.losses.as_ref()).collect();
    if done.is_empty() {
        return None;
    }
    let n = done.len() as f64;
    Some(LossAggregate {
        berhu: done.iter().map(|b| b.berhu).sum::<f64>() / n,
        gradient: done.iter().map(|b| b.gradient).sum::<f64>() / n,
        normal: done.iter().map(|b| b.normal).sum::<f64>() / n,
        gfrl: done.iter().map(|b| b.gfrl).sum::<f64>() / n,
        total: done.iter().map(|b| b.total).sum::<f64>() / n,
        files: done.len(),
    })
}

pub fn run(args: LossArgs) -> Result<ExitCode> {
    let stage = match args.stage {
        1 => StageId::I,
        2 => StageId::II,
        _ => StageId::III,
    };
    let config = TotalLossConfig {
        gamma: args.gamma,
        tau: args.tau,
        weight_all_pixel_losses: false,
        ..TotalLossConfig::default()
    };

    let pairs = collect_pairs(&args.pred, &args.gt)?;
    let files = process_pairs(&pairs, |pair| {
        let file_seed = stem_seed(args.seed, &pair.stem);
        match loss_pair(pair, &args, stage, &config, file_seed) {
            Ok(losses) => FileResult {
                name: pair.stem.clone(),
                seed: file_seed,
                losses: Some(losses),
                error: None,
            },
            Err(err) => FileResult {
                name: pair.stem.clone(),
                seed: file_seed,
                losses: None,
                error: Some(format!("{err:#}")),
            },
        }
    });

    println!(
        "{:<24} {:>10} {:>10} {:>10} {:>10} {:>10}",
        "file", "total", "berhu", "gradient", "normal", "gfrl"
    );
    for file in &files {
        if let Some(b) = &file.losses {
            println!(
                "{:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
                file.name, b.total, b.berhu, b.gradient, b.normal, b.gfrl
            );
        } else {
            println!(
                "{:<24} error: {}",
                file.name,
                file.error.as_deref().unwrap_or("unknown")
            );
        }
    }
    let aggregate = mean_breakdown(&files);
    if let Some(a) = &aggregate {
        println!(
            "{:<24} {:>10.6} {:>10.6} {:>10.6} {:>10.6} {:>10.6}",
            "mean", a.total, a.berhu, a.gradient, a.normal, a.gfrl
        );
    }

    let succeeded = aggregate.is_some();
    if let Some(path) = &args.report {
        let params = LossParams {
            pred: args.pred.display().to_string(),
            gt: args.gt.display().to_string(),
            stage: args.stage,
            gamma: args.gamma,
            tau: args.tau,
            edge_weights: args.edge_weights,
            pgm_scale: args.pgm_scale,
            lambdas: config.lambdas,
            spacings: config.spacings.clone(),
            grid: [config.grid_rows, config.grid_cols],
        };
        let body = LossBody { files, aggregate };
        write_json(path, &Report::new("loss", params, Some(args.seed), body))?;
    }
    if succeeded {
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("no file pair produced a loss breakdown");
    }
}
