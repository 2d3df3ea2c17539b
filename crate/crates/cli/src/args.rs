use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "rma", version, about = "Randomized misfit approach experiments for elliptic inverse problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the truth field and noisy observations.
    Synthesize(RunArgs),
    /// Compute the MAP point, deterministic or randomized.
    Invert(RunArgs),
    /// Convergence of the sketched linearized solution in the sketch size.
    Sweep(RunArgs),
    /// Statistical Morozov discrepancy table over repeated randomized inversions.
    Morozov(RunArgs),
    /// Spectra of the prior-preconditioned misfit Hessian, full and sketched.
    Spectrum(RunArgs),
    /// Empirical distortion-violation rates against the large-deviation bound.
    Jltest(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Synthesize(a)
            | Command::Invert(a)
            | Command::Sweep(a)
            | Command::Morozov(a)
            | Command::Spectrum(a)
            | Command::Jltest(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Synthesize(_) => "synthesize",
            Command::Invert(_) => "invert",
            Command::Sweep(_) => "sweep",
            Command::Morozov(_) => "morozov",
            Command::Spectrum(_) => "spectrum",
            Command::Jltest(_) => "jltest",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,

    /// Sketch size, or a comma-separated list for sweep, spectrum and jltest.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,

    /// Sketch distribution: gaussian, rademacher, achlioptas, uniform, sparse-<s>, or full.
    #[arg(long)]
    pub dist: Option<String>,

    /// Number of randomized trials.
    #[arg(long)]
    pub trials: Option<usize>,

    /// Base sketch seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Worker threads for independent trials.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,

    /// Output directory; overrides the config.
    #[arg(long)]
    pub out: Option<PathBuf>,

    /// Distortion tolerance for morozov and jltest.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,

    /// morozov: bisect the sketch size toward mean tau' = 1 before the trials.
    #[arg(long)]
    pub tune: bool,
}
