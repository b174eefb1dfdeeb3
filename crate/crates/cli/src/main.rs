mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::SelectorKind;

/// Prune tree ensembles while certifying that predictions do not change,
/// everywhere or on a calibrated in-distribution region.
#[derive(Debug, Parser)]
#[command(name = "pine", version)]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker thread cap for parallel class pairs and sweep jobs.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Shuffle a CSV and cut it into fit/cal/test parts.
    Split(SplitArgs),
    /// Train a boosted ensemble on a labeled CSV.
    Train(TrainArgs),
    /// Fit a plausibility score on the fit set.
    FitScore(FitScoreArgs),
    /// Conformal threshold for a fitted score.
    Calibrate(CalibrateArgs),
    /// Run the pruning loop and write the result JSON.
    Prune(PruneArgs),
    /// Fidelity, coverage and accuracy of a prune result on a test set.
    Evaluate(EvaluateArgs),
    /// Choose alpha from per-alpha mismatch counts.
    SelectAlpha(SelectAlphaArgs),
    /// Exhaustive cell scan comparing pruned and original predictions.
    Verify(VerifyArgs),
    /// Alpha grid times seeds, plus one full-space run per seed, to CSV.
    Sweep(SweepArgs),
    /// Generate synthetic data.
    Synth(SynthArgs),
    /// Convert an XGBoost text dump into ensemble JSON.
    Convert(ConvertArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Comma-separated partition ratios summing to 1.
    #[arg(long, value_delimiter = ',')]
    pub ratios: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScoreArg {
    Chowliu,
    Leafsupport,
    Iforest,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ObjectiveArg {
    L0,
    L1,
}

/// Score settings shared by fit-score, prune and sweep.
#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, value_enum)]
    pub score: Option<ScoreArg>,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub if_trees: Option<usize>,
    #[arg(long)]
    pub if_max_samples: Option<usize>,
    #[arg(long)]
    pub score_seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitScoreArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub score: ScoreArgs,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub score_model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Fit set: warm start for the constraint set, and score training data.
    #[arg(long)]
    pub fit: PathBuf,
    /// Calibration set; required unless --fipe or --score none.
    #[arg(long)]
    pub cal: Option<PathBuf>,
    #[arg(long, conflicts_with = "fipe")]
    pub alpha: Option<f64>,
    /// Full-space equivalence, no plausibility region.
    #[arg(long)]
    pub fipe: bool,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Write every Oracle MILP (LP format) and its solution JSON here.
    #[arg(long)]
    pub oracle_dump: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    /// Output of `prune`.
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelectAlphaArgs {
    /// JSON array of `{alpha, mismatches, n}`.
    #[arg(long)]
    pub candidates: PathBuf,
    #[arg(long, value_enum)]
    pub selector: Option<SelectorKind>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub rho_star: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub ensemble: PathBuf,
    #[arg(long)]
    pub result: PathBuf,
    #[arg(long)]
    pub cell_cap: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Labeled CSV; two-moons data is generated per seed when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub moons_n: Option<usize>,
    #[command(flatten)]
    pub score: ScoreArgs,
    #[arg(long, value_enum)]
    pub objective: Option<ObjectiveArg>,
    #[arg(long)]
    pub time_limit: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand)]
pub enum SynthKind {
    /// Two interleaved half-circles, two classes.
    Moons {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unlabeled samples from a random tree-structured categorical model.
    TreeDist {
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        states: Option<usize>,
        #[arg(long)]
        concentration: Option<f64>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write the generating model as score JSON.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long)]
    pub n_features: usize,
    #[arg(long, default_value_t = 2)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 0.0)]
    pub base_margin: f64,
    #[arg(long)]
    pub out: PathBuf,
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("PINE_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// The error chain joined by ": ", skipping causes already spelled out by
/// the message above them.
fn render(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !out.contains(&msg) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&msg);
        }
    }
    out
}

fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", render(&e));
            let usage = e.downcast_ref::<commands::UsageError>().is_some();
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
