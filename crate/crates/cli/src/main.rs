//! `decorr`: partition tabular data into low-correlation environments, train
//! invariant learners on them, and run the experiment suites.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use decorr_core::Error;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "decorr", version, about = "Low-correlation environment partitioning and invariant learning")]
struct Cli {
    /// Master seed. A random seed is drawn and logged when omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Split a CSV into environments and write the partition as JSON.
    Partition(PartitionArgs),
    /// Train a learner on the environments of a CSV.
    Train(TrainArgs),
    /// Run an experiment suite from a TOML config.
    Suite(SuiteArgs),
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    input: PathBuf,

    /// TOML schema (target, features, env_column, standardize).
    #[arg(long, conflicts_with_all = ["target", "env_column"])]
    schema: Option<PathBuf>,

    /// Target column when no schema file is given.
    #[arg(long)]
    target: Option<String>,

    /// Environment column when no schema file is given.
    #[arg(long)]
    env_column: Option<String>,

    /// Standardize features (the default unless the schema says otherwise).
    #[arg(long, overrides_with = "no_standardize")]
    standardize: bool,

    #[arg(long, overrides_with = "standardize")]
    no_standardize: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PartitionMethod {
    Decorr,
    Kmeans,
    Random,
    Eiil,
}

#[derive(Debug, Args)]
struct PartitionArgs {
    #[command(flatten)]
    data: DataArgs,

    #[arg(long, value_enum, default_value_t = PartitionMethod::Decorr)]
    method: PartitionMethod,

    /// Number of environments.
    #[arg(long, default_value_t = 2)]
    k: usize,

    /// Lower bound on Decorr sample weights.
    #[arg(long)]
    p0: Option<f64>,

    /// Decorr step size.
    #[arg(long)]
    alpha: Option<f64>,

    /// Optimizer iterations (Decorr gradient steps, EIIL ascent steps, k-means Lloyd steps).
    #[arg(long)]
    iters: Option<usize>,

    /// Weight of the Decorr mean-weight penalty.
    #[arg(long)]
    lambda: Option<f64>,

    /// Partition JSON; diagnostics go to `<stem>.diagnostics.json` beside it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Learner {
    Erm,
    Irmv1,
    Vrex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Linear,
    Logistic,
    Mlp,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,

    /// Partition JSON. Defaults to the schema's environment column, else one environment.
    #[arg(long)]
    partition: Option<PathBuf>,

    #[arg(long, value_enum, default_value_t = Learner::Irmv1)]
    learner: Learner,

    /// Model family; defaults to logistic for {0, 1} targets and linear otherwise.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,

    /// Invariance penalty weight.
    #[arg(long)]
    beta: Option<f64>,

    #[arg(long)]
    lr: Option<f64>,

    /// Training iterations.
    #[arg(long)]
    iters: Option<usize>,

    #[arg(long)]
    l2: Option<f64>,

    #[arg(long)]
    dropout: Option<f64>,

    #[arg(long)]
    warmup: Option<usize>,

    /// Validation CSV (same schema) for early stopping.
    #[arg(long)]
    validation: Option<PathBuf>,

    /// Model JSON; metrics go to `<stem>.metrics.json` beside it.
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct SuiteArgs {
    /// Suite config (TOML).
    config: PathBuf,

    /// Output directory, overriding the config.
    #[arg(long)]
    output: Option<PathBuf>,

    /// Paper-scale trial and test-environment counts.
    #[arg(long)]
    full_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GenerateKind {
    /// Correlated two-dimensional toy set.
    Toy,
    /// Causal/anti-causal regression example with one environment per noise level.
    IrmExample,
    /// Label-first classification model.
    Risks,
    /// Binary bias feature plus noisy label-dependent features.
    Biased,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: GenerateKind,

    /// Rows (per environment where environments exist).
    #[arg(long, default_value_t = 1000)]
    n: usize,

    /// Dimension `d` for irm-example, extra features for biased.
    #[arg(long, default_value_t = 2)]
    d: usize,

    /// Environments for irm-example (1-3) and risks.
    #[arg(long, default_value_t = 2)]
    envs: usize,

    #[arg(long)]
    output: PathBuf,
}

/// Usage and configuration problems exit with 1, everything else with 2.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::ConfigParse(_) | Error::Unsupported(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let seed = || {
        cli.seed.unwrap_or_else(|| {
            let s = rand::random::<u64>();
            log::warn!("no --seed given; using random seed {s}");
            s
        })
    };
    let result = match &cli.command {
        Command::Partition(a) => commands::partition(a, seed()),
        Command::Train(a) => commands::train(a, seed()),
        Command::Suite(a) => commands::suite(a, cli.seed),
        Command::Generate(a) => commands::generate(a, seed()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
