//! Batch command-line interface for the scatter-tomography toolkit.
//!
//! The pipeline is file-mediated: `simulate` writes sinograms,
//! `reconstruct` consumes them, `edges`/`support` refine images into a
//! support mask, `density` recovers the density value, and `analyze`
//! hosts the spectral diagnostics. Every command writes a manifest JSON
//! beside its outputs.

mod commands;
mod manifest;

use clap::{Parser, Subcommand};
use cst_core::CstError;

#[derive(Parser)]
#[command(name = "cst", version, about = "Compton scatter tomography toolkit")]
struct Cli {
    /// Worker threads (default: all cores; env CST_THREADS as fallback).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate non-linear, linear, and noisy sinograms of a phantom.
    Simulate(commands::SimulateArgs),
    /// Reconstruct an image from a sinogram file.
    Reconstruct(commands::ReconstructArgs),
    /// Extract an edge map from a reconstructed image.
    Edges(commands::EdgesArgs),
    /// Close the boundary and fill it into a support mask.
    Support(commands::SupportArgs),
    /// Estimate the density value from a support mask and data.
    Density(commands::DensityArgs),
    /// Spectral and singularity diagnostics.
    #[command(subcommand)]
    Analyze(commands::AnalyzeCommand),
}

fn exit_code(err: &CstError) -> i32 {
    match err {
        CstError::Io(_)
        | CstError::Json(_)
        | CstError::MagicMismatch { .. }
        | CstError::TruncatedPayload { .. }
        | CstError::HeaderError(_)
        | CstError::DimensionMismatch(_) => 3,
        CstError::StageMismatch { .. } => 4,
        CstError::InvalidParameter(_)
        | CstError::Divergence(_)
        | CstError::NonFinite(_)
        | CstError::EmptySupport
        | CstError::EmptyCurve => 5,
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli
        .threads
        .or_else(|| std::env::var("CST_THREADS").ok().and_then(|v| v.parse().ok()));
    if let Some(n) = threads {
        if n >= 1 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let result = match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Reconstruct(args) => commands::reconstruct(args),
        Command::Edges(args) => commands::edges(args),
        Command::Support(args) => commands::support(args),
        Command::Density(args) => commands::density(args),
        Command::Analyze(cmd) => commands::analyze(cmd),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}
