//! `sae`: survey prevalence estimation, variance repair, smoothing and simulation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

const EXIT_VALIDATION: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "sae", version, about = "Small area prevalence estimation from cluster surveys")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Direct domain estimates with optional phantom-cluster variance repair.
    Estimate(EstimateArgs),
    /// Fay-Herriot smoothing of direct estimates on the logit scale.
    Smooth(SmoothArgs),
    /// Posterior probabilities of each area falling in each prevalence band.
    Rank(RankArgs),
    /// Roll area estimates up to Admin-1 or national level.
    Aggregate(AggregateArgs),
    /// Monte Carlo comparison of the variance strategies.
    Simulate(SimulateArgs),
    /// Check a survey file and report its structure.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct SurveyInput {
    /// Survey CSV.
    #[arg(long)]
    input: PathBuf,
    /// `unit` (one row per unit) or `cluster` (one row per cluster).
    #[arg(long, default_value = "unit")]
    schema: String,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[command(flatten)]
    survey: SurveyInput,
    /// Variance repair: none, mixed or all.
    #[arg(long, default_value = "none")]
    fix: String,
    /// Optional CSV listing every domain (`domain`, optional `admin1`), so
    /// domains without sampled clusters still appear.
    #[arg(long)]
    domains: Option<PathBuf>,
    #[arg(long)]
    phantom_mean_urban: Option<f64>,
    #[arg(long)]
    phantom_weight_urban: Option<f64>,
    #[arg(long)]
    phantom_mean_rural: Option<f64>,
    #[arg(long)]
    phantom_weight_rural: Option<f64>,
    /// Confidence level of the logit-scale intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Output CSV; `phantoms.csv` and `manifest.json` go beside it.
    #[arg(long, default_value = "estimates.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SmoothArgs {
    /// iid or bym2.
    #[arg(long, default_value = "iid")]
    model: String,
    /// One intercept per Admin-1 area instead of a global intercept.
    #[arg(long)]
    nested: bool,
    #[arg(long)]
    estimates: PathBuf,
    /// `area_a,area_b` edge list; required for bym2.
    #[arg(long)]
    adjacency: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 4)]
    chains: usize,
    #[arg(long, default_value_t = 500)]
    burn_in: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Summary CSV; draws and hyperparameters are written beside it.
    #[arg(long, default_value = "smoothed.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RankArgs {
    /// Draws file written by `smooth`.
    #[arg(long)]
    draws: PathBuf,
    /// Band fractions from highest to lowest prevalence.
    #[arg(long, default_value = "0.2,0.6,0.2", value_delimiter = ',')]
    bands: Vec<f64>,
    #[arg(long, default_value = "ranking.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AggregateArgs {
    /// Population CSV with `admin1,area,population`.
    #[arg(long, conflicts_with = "from_weights", required_unless_present = "from_weights")]
    fractions: Option<PathBuf>,
    /// Derive fractions from the survey's design weights.
    #[arg(long, requires = "input")]
    from_weights: bool,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value = "unit")]
    schema: String,
    /// Draws file written by `smooth`.
    #[arg(long, conflicts_with = "estimates", required_unless_present = "estimates")]
    draws: Option<PathBuf>,
    /// Direct estimates CSV written by `estimate`.
    #[arg(long)]
    estimates: Option<PathBuf>,
    /// admin1 or national.
    #[arg(long, default_value = "admin1")]
    level: String,
    #[arg(long, default_value = "aggregates.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Strategies to compare.
    #[arg(long, default_value = "all_unfixed,all_fixed,mixed", value_delimiter = ',')]
    strategies: Vec<String>,
    /// Draw a fresh population for every replicate.
    #[arg(long)]
    vary_population: bool,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ValidateArgs {
    #[command(flatten)]
    survey: SurveyInput,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<sae_core::SaeError>() {
        Some(e) if !e.is_validation() => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let args = &argv[1..];
    let result = match cli.command {
        Command::Estimate(a) => commands::estimate(&a, args),
        Command::Smooth(a) => commands::smooth(&a, args),
        Command::Rank(a) => commands::rank(&a, args),
        Command::Aggregate(a) => commands::aggregate(&a, args),
        Command::Simulate(a) => commands::simulate(&a, args),
        Command::Validate(a) => commands::validate(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
