use anyhow::{bail, Result};
use clap::Args;
use depthkit::metrics::{evaluate, MetricsReport};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use super::positive_f64;
use crate::pairing::{collect_pairs, load_depth, process_pairs, Pair};
use crate::report::{write_json, Report};

/// Per-file metrics plus a pixel-count-weighted aggregate. A pair that fails
/// (for example with no jointly valid pixels) is reported in its row and
/// excluded from the aggregate; the run only fails if every pair does.
#[derive(Args)]
pub struct EvalArgs {
    /// Predicted depth: a .pfm/.pgm file or a directory of them
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth: a file or directory pairing with --pred by stem
    #[arg(long)]
    pub gt: PathBuf,
    /// Clamp predictions to this ceiling (meters) before evaluating
    #[arg(long, value_parser = positive_f64)]
    pub clamp_max: Option<f64>,
    /// Meters per 16-bit PGM unit
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub pgm_scale: f64,
    /// Write the JSON run report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalParams {
    pred: String,
    gt: String,
    clamp_max: Option<f64>,
    pgm_scale: f64,
}

#[derive(Serialize)]
struct FileResult {
    name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    metrics: Option<MetricsReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct EvalBody {
    files: Vec<FileResult>,
    aggregate: Option<MetricsReport>,
}

fn eval_pair(pair: &Pair, args: &EvalArgs) -> Result<MetricsReport> {
    let mut pred = load_depth(&pair.pred, args.pgm_scale)?;
    let gt = load_depth(&pair.gt, args.pgm_scale)?;
    if let Some(ceiling) = args.clamp_max {
        pred = pred.clamp_max(ceiling);
    }
    Ok(evaluate(&pred, &gt)?)
}

/// Pools per-file metrics, weighting each file by its valid-pixel count.
/// The mean-type metrics (rel, log10, the deltas) pool linearly; rmse pools
/// through the mean squared error and one final root.
fn combine<'a>(reports: impl Iterator<Item = &'a MetricsReport>) -> Option<MetricsReport> {
    let mut pixels = 0usize;
    let mut rel = 0.0;
    let mut mse = 0.0;
    let mut log10 = 0.0;
    let mut deltas = [0.0f64; 3];
    for r in reports {
        let n = r.pixel_count as f64;
        pixels += r.pixel_count;
        rel += n * r.rel;
        mse += n * r.rmse * r.rmse;
        log10 += n * r.log10;
        deltas[0] += n * r.delta1;
        deltas[1] += n * r.delta2;
        deltas[2] += n * r.delta3;
    }
    if pixels == 0 {
        return None;
    }
    let n = pixels as f64;
    Some(MetricsReport {
        rel: rel / n,
        rmse: (mse / n).sqrt(),
        log10: log10 / n,
        delta1: deltas[0] / n,
        delta2: deltas[1] / n,
        delta3: deltas[2] / n,
        pixel_count: pixels,
    })
}

fn print_row(name: &str, m: &MetricsReport) {
    println!(
        "{name:<24} {:>9.6} {:>9.6} {:>9.6} {:>7.4} {:>7.4} {:>7.4} {:>9}",
        m.rel, m.rmse, m.log10, m.delta1, m.delta2, m.delta3, m.pixel_count
    );
}

pub fn run(args: EvalArgs) -> Result<ExitCode> {
    let pairs = collect_pairs(&args.pred, &args.gt)?;
    let files = process_pairs(&pairs, |pair| match eval_pair(pair, &args) {
        Ok(metrics) => FileResult {
            name: pair.stem.clone(),
            metrics: Some(metrics),
            error: None,
        },
        Err(err) => FileResult {
            name: pair.stem.clone(),
            metrics: None,
            error: Some(format!("{err:#}")),
        },
    });

    println!(
        "{:<24} {:>9} {:>9} {:>9} {:>7} {:>7} {:>7} {:>9}",
        "file", "rel", "rmse", "log10", "d1", "d2", "d3", "pixels"
    );
    for file in &files {
        if let Some(m) = &file.metrics {
            print_row(&file.name, m);
        } else {
            println!(
                "{:<24} error: {}",
                file.name,
                file.error.as_deref().unwrap_or("unknown")
            );
        }
    }

    let aggregate = combine(files.iter().filter_map(|f| f.metrics.as_ref()));
    if let Some(a) = &aggregate {
        print_row("aggregate", a);
    }

    let succeeded = aggregate.is_some();
    if let Some(path) = &args.report {
        let params = EvalParams {
            pred: args.pred.display().to_string(),
            gt: args.gt.display().to_string(),
            clamp_max: args.clamp_max,
            pgm_scale: args.pgm_scale,
        };
        let body = EvalBody { files, aggregate };
        write_json(path, &Report::new("eval", params, None, body))?;
    }
    if succeeded {
        Ok(ExitCode::SUCCESS)
    } else {
        bail!("no file pair produced metrics");
    }
}
