use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::UsageError;

/// Learning to rank by direct optimization of NDCG, ERR and MRR.
#[derive(Parser, Debug)]
#[command(name = "stochrank", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a ranking model on an SVMLight/LETOR file.
    Train(Box<TrainArgs>),
    /// Evaluate a saved model.
    Eval(EvalArgs),
    /// Compare gradient estimators against finite differences on one query.
    Gradcheck(GradcheckArgs),
    /// Run the two-query toy problem over several seeds.
    Synthetic(SyntheticArgs),
    /// Time the coordinate gradient estimate for growing list lengths.
    Bench(BenchArgs),
    /// Paired one-tailed t-test on per-query metric values.
    Ttest(TtestArgs),
}

/// Every option can also be given in the `--config` file as `key = value`
/// (with dashes or underscores); command-line values win.
#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data.
    #[arg(long)]
    pub train: Option<String>,
    /// Validation data, logged every iteration.
    #[arg(long)]
    pub valid: Option<String>,
    /// Where to write the model.
    #[arg(long)]
    pub model_out: Option<String>,
    /// Where to write the per-iteration CSV log.
    #[arg(long)]
    pub log_out: Option<String>,
    #[arg(long)]
    pub iterations: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub depth: Option<String>,
    /// Smoothing scale.
    #[arg(long)]
    pub sigma: Option<String>,
    /// Relevance shift of the smoothing noise (0 = centered).
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long)]
    pub model_shrink_rate: Option<String>,
    /// Inverse temperature of the Langevin noise; `inf` disables it.
    #[arg(long)]
    pub diffusion_temperature: Option<String>,
    /// Guard of the scale-free projection.
    #[arg(long)]
    pub nu: Option<String>,
    /// Noise draws averaged per gradient estimate.
    #[arg(long)]
    pub samples: Option<String>,
    /// ccs, ccs-sfa or reinforce.
    #[arg(long)]
    pub estimator: Option<String>,
    /// sgb or sglb.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// e.g. NDCG@5, ERR@10, MRR.
    #[arg(long)]
    pub metric: Option<String>,
    #[arg(long)]
    pub max_borders: Option<String>,
    /// Keep the best iteration instead of the last.
    #[arg(long)]
    pub use_best_model: bool,
    /// Record wall-clock times in the log.
    #[arg(long)]
    pub log_timing: bool,
    /// Map labels to 1{label > 0} before training.
    #[arg(long)]
    pub binarize_labels: bool,
    /// Skip the hyperparameter range checks.
    #[arg(long = "unsafe")]
    pub unsafe_ranges: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Metric to report; repeat for several.
    #[arg(long, default_value = "NDCG@5")]
    pub metric: Vec<String>,
    #[arg(long)]
    pub binarize_labels: bool,
    /// CSV with one row per query and one column per metric.
    #[arg(long)]
    pub per_query_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Comma-separated scores; random when omitted.
    #[arg(long)]
    pub scores: Option<String>,
    /// Comma-separated labels; random when omitted.
    #[arg(long)]
    pub labels: Option<String>,
    /// Size of the random instance.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    #[arg(long, default_value = "NDCG@3")]
    pub metric: String,
    #[arg(long, default_value_t = 200_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    /// Half-width of the central difference.
    #[arg(long, default_value_t = 0.05)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SyntheticArgs {
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    /// Plain boosting with centered smoothing and no projection instead.
    #[arg(long)]
    pub contrast: bool,
    /// Also write the toy dataset in SVMLight format.
    #[arg(long)]
    pub write_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 8)]
    pub min_exp: u32,
    #[arg(long, default_value_t = 14)]
    pub max_exp: u32,
    /// Metric cutoff k.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Largest exponent for which the quadratic path is also timed.
    #[arg(long, default_value_t = 12)]
    pub naive_max_exp: u32,
    #[arg(long, default_value_t = 0.2)]
    pub min_seconds: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct TtestArgs {
    /// Per-query values of the first system.
    pub a: PathBuf,
    /// Per-query values of the second system.
    pub b: PathBuf,
    /// Column to read from CSV files with a header; defaults to the last.
    #[arg(long)]
    pub column: Option<String>,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("STOCHRANK_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config::usage(format!("STOCHRANK_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(a) => commands::train(*a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Synthetic(a) => commands::synthetic(a),
        Command::Bench(a) => commands::bench(a),
        Command::Ttest(a) => commands::ttest(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
