use clap::{Parser, Subcommand};
use std::process::ExitCode;

mod commands;
mod pairing;
mod report;

/// Batch front end for the depthkit library.
///
/// Depth maps are read from .pfm (float) or .pgm (16-bit, scaled to meters)
/// files. Commands that take --pred/--gt accept either two files or two
/// directories whose files pair up by identical stem. Every command with a
/// --seed is bit-deterministic: the same invocation writes the same report.
///
/// Exit status: 0 on success, 1 when a run fails validation or produces no
/// usable result, 2 on usage errors.
#[derive(Parser)]
#[command(name = "depthkit", version, about = "Depth-map evaluation, losses, boundary masks, and curriculum sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate predicted depth maps against ground truth
    Eval(commands::eval::EvalArgs),
    /// Compute the staged training-loss breakdown per file pair
    Loss(commands::loss::LossArgs),
    /// Render the edge-aware weight mask of a depth map as an 8-bit PGM
    Mask(commands::mask::MaskArgs),
    /// Draw curriculum-mixed training batches from a dataset roster
    Sample(commands::sample::SampleArgs),
    /// Verify analytic gradients against central finite differences
    Gradcheck(commands::gradcheck::GradcheckArgs),
    /// Write the surface-normal field of a depth map as a 3-channel PFM
    Normals(commands::normals::NormalsArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Eval(args) => commands::eval::run(args),
        Command::Loss(args) => commands::loss::run(args),
        Command::Mask(args) => commands::mask::run(args),
        Command::Sample(args) => commands::sample::run(args),
        Command::Gradcheck(args) => commands::gradcheck::run(args),
        Command::Normals(args) => commands::normals::run(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
