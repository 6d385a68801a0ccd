//! Command-line front end for the polypkit pipeline.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polypkit::StrategyName;

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "POLYPKIT_THREADS";

#[derive(Parser)]
#[command(name = "polypkit", version, about = "Region-based polyp detection pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration and the flags that override it.
#[derive(Args, Clone, Default)]
pub struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `rng_seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `augmentation` (none, rot, aug1, aug2).
    #[arg(long)]
    pub strategy: Option<StrategyName>,
    /// Overrides `detector.detect_threshold`.
    #[arg(long)]
    pub detect_threshold: Option<f64>,
    /// Overrides `post_learn.fp_score_threshold`.
    #[arg(long)]
    pub fp_threshold: Option<f64>,
    /// Overrides `post_learn.reliable_score_threshold`.
    #[arg(long)]
    pub reliable_threshold: Option<f64>,
    /// Overrides `eval.fps`.
    #[arg(long)]
    pub fps: Option<f64>,
    /// Sets `eval.duplicates_as_fp`.
    #[arg(long)]
    pub strict_duplicates: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Expand a dataset with an augmentation strategy.
    Augment {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a model on a dataset, augmenting it in memory first.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Run a model over every frame of a dataset.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Per-frame detection times, kept apart from the detections.
        #[arg(long)]
        timing: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score a detections file against the dataset ground truth.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Treat the dataset as one video and add PDR and reaction time.
        #[arg(long)]
        video: bool,
        /// Also write the human-readable table here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Retrain on high-scoring detections from polyp-free frames.
    FpLearn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the collected false positives.
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Self-train on the reliable detections of one video.
    OfflineLearn {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Where to write the reliable regions.
        #[arg(long)]
        records: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Merge metric reports into one table.
    Report {
        #[arg(long)]
        output: PathBuf,
        /// Also write the merged report records here.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

fn init_threads() -> Result<(), commands::Failure> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| commands::Failure::config(format!("{THREADS_ENV} must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| commands::Failure::other(e.to_string()))
}

fn run(cli: Cli) -> Result<(), commands::Failure> {
    init_threads()?;
    match cli.command {
        Command::Augment { dataset, output, cfg } => commands::augment(&dataset, &output, &cfg),
        Command::Train { dataset, output, cfg } => commands::train(&dataset, &output, &cfg),
        Command::Detect {
            model,
            dataset,
            output,
            timing,
            cfg,
        } => commands::detect(&model, &dataset, &output, timing.as_deref(), &cfg),
        Command::Eval {
            dataset,
            detections,
            output,
            timing,
            video,
            table,
            cfg,
        } => commands::eval(&commands::EvalArgs {
            dataset: &dataset,
            detections: &detections,
            output: &output,
            timing: timing.as_deref(),
            video,
            table: table.as_deref(),
            cfg: &cfg,
        }),
        Command::FpLearn {
            model,
            dataset,
            output,
            records,
            cfg,
        } => commands::fp_learn(&model, &dataset, &output, &records, &cfg),
        Command::OfflineLearn {
            model,
            dataset,
            output,
            records,
            cfg,
        } => commands::offline_learn(&model, &dataset, &output, &records, &cfg),
        Command::Report {
            output,
            records,
            fps,
            reports,
        } => commands::report(&output, records.as_deref(), fps, &reports),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("polypkit: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
