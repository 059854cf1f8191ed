use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Multicategory margin-vector boosting.
#[derive(Debug, Parser)]
#[command(name = "mcboost", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a model and write it to a file.
    Train(TrainArgs),
    /// Score a saved model on labelled data.
    Evaluate(EvaluateArgs),
    /// Per-round training and test error as CSV.
    Curve(CurveArgs),
    /// Check Fisher consistency of the loss families on random simplex points.
    Consistency(ConsistencyArgs),
    /// Run both algorithms on the benchmark splits in a directory.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Algorithm {
    Gentle,
    Adaml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum DelimiterArg {
    Auto,
    Comma,
    Whitespace,
}

#[derive(Debug, Clone, Args)]
struct InputArgs {
    /// Zero-based label column, or "last".
    #[arg(long, default_value = "last")]
    label_column: String,
    #[arg(long, value_enum, default_value_t = DelimiterArg::Auto)]
    delimiter: DelimiterArg,
    /// Skip the first line of every data file.
    #[arg(long)]
    header: bool,
    /// Seed for `synth:` data sources without their own `seed=` key.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
    /// Terminal nodes per tree. Defaults to 8 for gentle and m for adaml.
    #[arg(long)]
    leaves: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    fit: FitArgs,
    /// Data file, or `synth:m=3,n=300,d=2,sep=2[,seed=1]`.
    #[arg(long)]
    data: String,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: String,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long)]
    train: String,
    #[arg(long)]
    test: String,
    /// Defaults to standard output.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Debug, Args)]
struct ConsistencyArgs {
    /// A loss family name or "all".
    #[arg(long, default_value = "all")]
    loss: String,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Directory holding `<name>.train` and `<name>.test` files.
    #[arg(long)]
    data_dir: PathBuf,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [Algorithm::Adaml, Algorithm::Gentle])]
    algorithms: Vec<Algorithm>,
    #[arg(long, default_value_t = 200)]
    rounds: usize,
    /// Also write the table as CSV.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Train(args) => commands::train(&args),
        Command::Evaluate(args) => commands::evaluate(&args),
        Command::Curve(args) => commands::curve(&args),
        Command::Consistency(args) => commands::consistency(&args),
        Command::Bench(args) => commands::bench(&args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("mcboost: {failure}");
            ExitCode::from(failure.exit_code())
        }
    }
}
