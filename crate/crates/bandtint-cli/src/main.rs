//! Batch command-line surface: corpus generation, band splitting, training,
//! inference, evaluation, the partition sweep, and the strategy comparison.
//! Data goes to stdout and files; diagnostics go to stderr, gated by
//! `BANDTINT_LOG={error,info,debug}`.

mod commands;
mod logging;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bandtint::pipeline::Validation;
use bandtint::regions::SchemeKind;

fn parse_scheme(s: &str) -> Result<SchemeKind, String> {
    s.parse::<SchemeKind>().map_err(|e| e.to_string())
}

fn parse_validation(s: &str) -> Result<Validation, String> {
    s.parse::<Validation>().map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(
    name = "bandtint",
    version,
    about = "Frequency-band colorization refinement and region-mean cast correction"
)]
struct Cli {
    /// Seed for every random choice of the invoked command.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads for commands that run independent training jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Parser, Debug)]
struct TrainFlags {
    #[arg(long, default_value_t = 300)]
    steps: usize,
    #[arg(long, default_value_t = 4)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Weight of the L1 term in the hybrid loss.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Parser, Debug)]
struct RadiusFlags {
    /// Low-band radius in frequency bins at the 256-pixel reference size;
    /// rescaled proportionally to each image.
    #[arg(long, default_value_t = 30.0)]
    r_low: f64,
    /// Mid/high boundary radius at the reference size.
    #[arg(long, default_value_t = 90.0)]
    r_mid: f64,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic corpus of color targets and cast-degraded variants.
    GenCorpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Amplitude of the per-channel constant color cast, in [0, 0.5].
        #[arg(long, default_value_t = 0.2)]
        cast: f64,
    },
    /// Split an image into its low/mid/high frequency bands.
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[command(flatten)]
        radii: RadiusFlags,
    },
    /// Train a model on a corpus directory.
    Train {
        /// One of: stub (baseline colorizer), pipeline (three band stubs
        /// plus the artifact remover), cast (cast corrector).
        #[arg(long)]
        model: String,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_parser = parse_scheme, default_value = "five")]
        scheme: SchemeKind,
        #[arg(long, value_parser = parse_validation, default_value = "none")]
        validation: Validation,
        /// Emit the three-protocol validation comparison table (cast only;
        /// needs --test-corpus).
        #[arg(long, default_value_t = false)]
        compare_validation: bool,
        #[arg(long)]
        test_corpus: Option<PathBuf>,
        #[command(flatten)]
        radii: RadiusFlags,
    },
    /// Colorize a grayscale image with a trained frequency pipeline.
    Colorize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional cast-corrector directory applied after the pipeline;
        /// requires --means.
        #[arg(long)]
        cast: Option<PathBuf>,
        #[arg(long)]
        means: Option<PathBuf>,
    },
    /// Apply a trained cast corrector to an image with supplied means.
    Correct {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        cast: PathBuf,
        #[arg(long)]
        means: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a system over a corpus, with per-band PSNR reports.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        pipeline: Option<PathBuf>,
        #[arg(long)]
        cast: Option<PathBuf>,
        /// Baseline stub directory for the comparison row; the identity
        /// system is the baseline when absent.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        radii: RadiusFlags,
    },
    /// Train one cast corrector per partition scheme and compare them.
    SweepPartitions {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        test_corpus: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Train and compare the three series-combination strategies.
    CompareStrategies {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        test_corpus: PathBuf,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(long, value_parser = parse_scheme, default_value = "five")]
        scheme: SchemeKind,
        /// Run a single strategy (1, 2, or 3) instead of all three.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        strategy: Option<u8>,
        #[command(flatten)]
        radii: RadiusFlags,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("bandtint: {err:#}");
            ExitCode::FAILURE
        }
    }
}
