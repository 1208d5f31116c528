use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use admm_dad::container;
use admm_dad::data::load_records;
use admm_dad::experiment::{
    report, run_diagnostics, run_grid, write_matrix_csv, DatasetSpec, ExperimentGrid, GridOutput,
};
use admm_dad::model::MeasurementModel;
use admm_dad::training::TrainConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

#[derive(Parser)]
#[command(name = "admm-dad", version, about = "Train and analyse ADMM-DAD decoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every cell of an (n, N, L) grid and write records plus a summary.
    Run(RunArgs),
    /// Frame diagnostics of a saved checkpoint.
    Diagnose(DiagnoseArgs),
    /// Summarize a results file into CSV.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    Synthetic,
    Mnist,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    dataset: DatasetKind,
    /// Directory with the MNIST IDX files.
    #[arg(long, default_value = "data/mnist")]
    mnist_dir: PathBuf,
    /// Signal dimensions (ignored for MNIST, which is always 784).
    #[arg(long = "n", value_delimiter = ',', default_value = "50")]
    n: Vec<usize>,
    /// Redundancies of the analysis operator.
    #[arg(long = "N", value_delimiter = ',', default_value = "100,250,500")]
    big_n: Vec<usize>,
    /// Network depths.
    #[arg(long = "L", value_delimiter = ',', default_value = "5,10,15")]
    depth: Vec<usize>,
    #[arg(long, default_value_t = 0.25)]
    cs_ratio: f64,
    #[arg(long, default_value_t = 2000)]
    s_train: usize,
    #[arg(long, default_value_t = 500)]
    s_test: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, default_value_t = 1e-4)]
    noise_std: f64,
    #[arg(long, default_value_t = 1e-4)]
    lr: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 10)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    max_epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Use B_in = B_out = max of the two, enabling the equal-radius bound.
    #[arg(long)]
    equal_b: bool,
    /// Weight of the monitored ||S^-1 S - I||_F term.
    #[arg(long, default_value_t = 0.0)]
    frame_regularizer: f64,
    /// Worker threads; 0 picks the number of cores.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory for results.jsonl, summary.csv and checkpoints/.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Measurement matrix in the binary container format.
    #[arg(long)]
    measurement: PathBuf,
    /// Where to write S^-1 S as CSV.
    #[arg(long)]
    sinv_s_csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn run(args: RunArgs) -> Result<bool, admm_dad::Error> {
    let (dataset, n_values) = match args.dataset {
        DatasetKind::Synthetic => (DatasetSpec::Synthetic, args.n),
        DatasetKind::Mnist => (DatasetSpec::Mnist { dir: args.mnist_dir }, vec![784]),
    };
    let grid = ExperimentGrid {
        dataset,
        n_values,
        big_n_values: args.big_n,
        depth_values: args.depth,
        cs_ratio: args.cs_ratio,
        s_train: args.s_train,
        s_test: args.s_test,
        repeats: args.repeats,
        master_seed: args.seed,
        lambda: args.lambda,
        rho: args.rho,
        noise_std: args.noise_std,
        train: TrainConfig {
            batch_size: args.batch_size,
            learning_rate: args.lr,
            max_epochs: args.max_epochs,
            early_stop_patience: args.patience,
            frame_regularizer: args.frame_regularizer,
            ..TrainConfig::default()
        },
        delta: args.delta,
        equal_b: args.equal_b,
        workers: args.workers,
    };
    fs::create_dir_all(&args.out)?;
    let output = GridOutput {
        results: Some(args.out.join("results.jsonl")),
        checkpoints: Some(args.out.join("checkpoints")),
    };
    let outcome = run_grid(&grid, &output)?;
    report(&outcome.records, args.out.join("summary.csv"))?;
    for f in &outcome.failures {
        error!("cell {:?} failed: {}", f.cell, f.error);
    }
    println!(
        "{} cells completed, {} failed; summary in {}",
        outcome.records.len(),
        outcome.failures.len(),
        args.out.join("summary.csv").display()
    );
    Ok(outcome.all_succeeded())
}

fn diagnose(args: DiagnoseArgs) -> Result<bool, admm_dad::Error> {
    let a = container::load_matrix(&args.measurement)?;
    let mm = MeasurementModel::new(a, 0.0)?;
    let diag = run_diagnostics(&args.checkpoint, &mm)?;
    if let Some(path) = &args.sinv_s_csv {
        write_matrix_csv(path, &diag.sinv_s)?;
    }
    println!("{}", serde_json::to_string_pretty(&diag)?);
    Ok(true)
}

fn summarize(args: ReportArgs) -> Result<bool, admm_dad::Error> {
    let records = load_records(&args.results)?;
    report(&records, &args.out)?;
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Diagnose(args) => diagnose(args),
        Command::Report(args) => summarize(args),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
