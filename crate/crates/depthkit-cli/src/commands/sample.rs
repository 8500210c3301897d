use anyhow::{bail, Context, Result};
use clap::Args;
use depthkit::mixer::{
    default_stages, load_datasets_json, next_batch, observe_epoch, sampling_weights, Category,
    CurriculumSchedule, PlateauConfig, SampleBatch, DEFAULT_BATCH_SIZE,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use super::positive_f64;
use crate::report::{write_json, Report};

/// Draws training batches from a dataset roster under the staged curriculum.
/// Every image of every active dataset is drawn with probability
/// proportional to 1/size, so active datasets contribute equally per batch
/// in expectation.
#[derive(Args)]
pub struct SampleArgs {
    /// Dataset roster JSON: [{"id": ..., "category": "I|S|PT|HC", "size": ...}, ...]
    #[arg(long)]
    pub datasets: PathBuf,
    /// Sample at this fixed curriculum stage (1-based)
    #[arg(long, conflicts_with = "auto", value_parser = clap::value_parser!(u64).range(1..))]
    pub stage: Option<u64>,
    /// Replay an "epoch,loss" CSV through the plateau detector and sample at
    /// the stage it lands on
    #[arg(long)]
    pub auto: Option<PathBuf>,
    /// Number of batches to draw
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub batches: u64,
    /// Images per batch
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE as u64, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: u64,
    /// Relative improvement below which an epoch counts as stalled (--auto)
    #[arg(long, default_value_t = 1e-3, value_parser = positive_f64)]
    pub plateau_epsilon: f64,
    /// Stalled epochs required before the stage advances (--auto)
    #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(1..))]
    pub patience: u64,
    /// RNG seed for batch drawing
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the JSON run report here
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct SampleParams {
    datasets: String,
    stage: Option<u64>,
    auto: Option<String>,
    batches: u64,
    batch_size: u64,
    plateau_epsilon: f64,
    patience: u64,
}

#[derive(Serialize)]
struct Transition {
    epoch: usize,
    from_stage: usize,
    to_stage: usize,
}

#[derive(Serialize)]
struct WeightEcho {
    dataset: String,
    per_image: f64,
    mass: f64,
}

#[derive(Serialize)]
struct FrequencyEntry {
    dataset: String,
    draws: usize,
    frequency: f64,
}

#[derive(Serialize)]
struct SampleBody {
    stage: usize,
    stage_count: usize,
    categories: Vec<Category>,
    transitions: Vec<Transition>,
    weights: Vec<WeightEcho>,
    frequencies: Vec<FrequencyEntry>,
    batches: Vec<SampleBatch>,
}

/// Parses the loss-history CSV: an "epoch,loss" header then one row per
/// epoch. Blank lines are skipped.
fn parse_loss_history(text: &str) -> Result<Vec<(usize, f64)>> {
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        bail!("empty loss history");
    };
    if header.trim() != "epoch,loss" {
        bail!("loss history must start with an \"epoch,loss\" header, got {header:?}");
    }
    let mut rows = Vec::new();
    for (index, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = index + 1;
        let (epoch, loss) = line
            .split_once(',')
            .with_context(|| format!("line {lineno}: expected \"epoch,loss\""))?;
        let epoch: usize = epoch
            .trim()
            .parse()
            .with_context(|| format!("line {lineno}: bad epoch {epoch:?}"))?;
        let loss: f64 = loss
            .trim()
            .parse()
            .with_context(|| format!("line {lineno}: bad loss {loss:?}"))?;
        rows.push((epoch, loss));
    }
    Ok(rows)
}

fn category_label(categories: &[Category]) -> String {
    categories
        .iter()
        .map(|c| {
            serde_json::to_value(c)
                .expect("category serializes")
                .as_str()
                .expect("category is a string")
                .to_owned()
        })
        .collect::<Vec<_>>()
        .join("+")
}

pub fn run(args: SampleArgs) -> Result<ExitCode> {
    let text = fs::read_to_string(&args.datasets)
        .with_context(|| format!("reading {}", args.datasets.display()))?;
    let datasets = load_datasets_json(&text)?;
    let mut schedule = CurriculumSchedule::new(default_stages(), datasets)?;

    let mut transitions = Vec::new();
    if let Some(csv_path) = &args.auto {
        let history = fs::read_to_string(csv_path)
            .with_context(|| format!("reading {}", csv_path.display()))?;
        let cfg = PlateauConfig {
            epsilon: args.plateau_epsilon,
            patience: args.patience as usize,
        };
        for (epoch, loss) in parse_loss_history(&history)? {
            let before = schedule.active_stage();
            if observe_epoch(&mut schedule, loss, &cfg)? {
                transitions.push(Transition {
                    epoch,
                    from_stage: before + 1,
                    to_stage: schedule.active_stage() + 1,
                });
            }
        }
    } else if let Some(stage) = args.stage {
        schedule.set_stage(stage as usize - 1)?;
    }

    let weights = sampling_weights(&schedule)?;
    let weight_echo: Vec<WeightEcho> = weights
        .iter()
        .map(|w| WeightEcho {
            dataset: schedule.datasets()[w.dataset_index].id.clone(),
            per_image: w.per_image,
            mass: w.mass,
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut batches = Vec::with_capacity(args.batches as usize);
    for _ in 0..args.batches {
        batches.push(next_batch(&schedule, args.batch_size as usize, &mut rng)?);
    }

    let order: Vec<String> = schedule
        .active_datasets()
        .map(|(_, d)| d.id.clone())
        .collect();
    let mut draws: HashMap<&str, usize> = order.iter().map(|id| (id.as_str(), 0)).collect();
    for batch in &batches {
        for entry in &batch.entries {
            *draws
                .get_mut(entry.dataset.as_str())
                .expect("every ticket names an active dataset") += 1;
        }
    }
    let total_draws = (args.batches * args.batch_size) as usize;
    let frequencies: Vec<FrequencyEntry> = order
        .iter()
        .map(|id| {
            let count = draws[id.as_str()];
            FrequencyEntry {
                dataset: id.clone(),
                draws: count,
                frequency: count as f64 / total_draws as f64,
            }
        })
        .collect();

    let categories: Vec<Category> = schedule.active_categories().iter().copied().collect();
    println!(
        "stage {} of {} (categories {}), {} batches of {} ({} draws)",
        schedule.active_stage() + 1,
        schedule.stage_count(),
        category_label(&categories),
        args.batches,
        args.batch_size,
        total_draws
    );
    for t in &transitions {
        println!(
            "  stage advance after epoch {}: {} -> {}",
            t.epoch, t.from_stage, t.to_stage
        );
    }
    for f in &frequencies {
        println!(
            "  {:<20} drew {:>7} ({:.4})",
            f.dataset, f.draws, f.frequency
        );
    }

    if let Some(path) = &args.report {
        let params = SampleParams {
            datasets: args.datasets.display().to_string(),
            stage: args.stage,
            auto: args.auto.as_ref().map(|p| p.display().to_string()),
            batches: args.batches,
            batch_size: args.batch_size,
            plateau_epsilon: args.plateau_epsilon,
            patience: args.patience,
        };
        let body = SampleBody {
            stage: schedule.active_stage() + 1,
            stage_count: schedule.stage_count(),
            categories,
            transitions,
            weights: weight_echo,
            frequencies,
            batches,
        };
        write_json(path, &Report::new("sample", params, Some(args.seed), body))?;
    }
    Ok(ExitCode::SUCCESS)
}
