use anyhow::Result;
use clap::Args;
use depthkit::gradcheck::{
    check_berhu, check_gcb, check_gfrl, check_gradient_loss, check_normal_loss, check_sab,
    GradCheckReport, DEFAULT_EPSILON, PASS_THRESHOLD,
};
use serde::Serialize;
use std::path::PathBuf;
use std::process::ExitCode;

use super::positive_f64;
use crate::report::{write_json, Report};

#[derive(Clone, Copy, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum BlockChoice {
    /// Spatial attention block forward/backward
    Sab,
    /// Global context block forward/backward
    Gcb,
    /// The four loss functions
    Losses,
}

/// Compares every analytic gradient of the chosen target against central
/// finite differences on seeded random inputs. Exits nonzero if any check's
/// worst relative error reaches 1e-4.
#[derive(Args)]
pub struct GradcheckArgs {
    /// Which gradients to verify
    #[arg(long, value_enum)]
    block: BlockChoice,
    /// Finite-difference step
    #[arg(long, default_value_t = DEFAULT_EPSILON, value_parser = positive_f64)]
    eps: f64,
    /// Seed for the random inputs
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the JSON run report here
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize)]
struct GradcheckParams {
    block: BlockChoice,
    epsilon: f64,
}

#[derive(Serialize)]
struct GradcheckBody {
    checks: Vec<GradCheckReport>,
    passed: bool,
}

pub fn run(args: GradcheckArgs) -> Result<ExitCode> {
    let checks: Vec<GradCheckReport> = match args.block {
        BlockChoice::Sab => vec![check_sab(args.seed, args.eps)?],
        BlockChoice::Gcb => vec![check_gcb(args.seed, args.eps)?],
        BlockChoice::Losses => vec![
            check_berhu(args.seed, args.eps)?,
            check_gradient_loss(args.seed, args.eps)?,
            check_normal_loss(args.seed, args.eps)?,
            check_gfrl(args.seed, args.eps)?,
        ],
    };

    for check in &checks {
        println!(
            "{:<10} max rel err {:>12.3e}  checked {:>5}  skipped {:>3}  {}",
            check.target,
            check.max_rel_error,
            check.entries_checked,
            check.entries_skipped,
            if check.passed() { "pass" } else { "FAIL" }
        );
    }
    let passed = checks.iter().all(GradCheckReport::passed);

    if let Some(path) = &args.report {
        let params = GradcheckParams {
            block: args.block,
            epsilon: args.eps,
        };
        let body = GradcheckBody { checks, passed };
        write_json(path, &Report::new("gradcheck", params, Some(args.seed), body))?;
    }

    if passed {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("gradient check failed: a relative error reached {PASS_THRESHOLD:e}");
        Ok(ExitCode::FAILURE)
    }
}
