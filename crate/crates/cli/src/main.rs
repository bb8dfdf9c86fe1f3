use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};
use promptgauge::harness::{HarnessError, Overrides, Pipeline, RunConfig, Stage, StageStatus};

#[derive(Parser)]
#[command(name = "promptgauge", version, about = "Execution-free prompt evaluation and optimization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Answer every backend call from this recorded store.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Directory for stage artifacts and manifests.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the prompt pool for the training queries.
    BuildPool(Common),
    /// Execute every pool candidate and compute its metrics and label.
    Measure(Common),
    /// Rank metrics by boosted-tree gain and keep the informative ones.
    SelectMetrics(Common),
    /// Train the evaluator on the selected metrics.
    TrainEvaluator(Common),
    /// Optimize the starting prompt for every test query.
    Optimize(Common),
    /// Execute baseline and optimized prompts on the test split.
    Benchmark(Common),
    /// Write report.json and report.txt from the stage artifacts.
    Report(Common),
    /// Run every stage in order, reusing unchanged ones.
    Run(Common),
}

fn execute(command: Command) -> Result<(), HarnessError> {
    let (common, last, only) = match command {
        Command::BuildPool(c) => (c, Stage::BuildPool, true),
        Command::Measure(c) => (c, Stage::Measure, true),
        Command::SelectMetrics(c) => (c, Stage::SelectMetrics, true),
        Command::TrainEvaluator(c) => (c, Stage::TrainEvaluator, true),
        Command::Optimize(c) => (c, Stage::Optimize, true),
        Command::Benchmark(c) => (c, Stage::Benchmark, true),
        Command::Report(c) => (c, Stage::Report, true),
        Command::Run(c) => (c, Stage::Report, false),
    };
    let overrides = Overrides { seed: common.seed, replay_dir: common.replay, out_dir: common.out };
    let config = RunConfig::load(&common.config, &overrides)?;
    let pipeline = Pipeline::from_config(config)?;
    let stages: Vec<Stage> = if only { vec![last] } else { Stage::ALL.to_vec() };
    for stage in stages {
        let status = pipeline.run(stage)?;
        info!("{stage}: {}", if status == StageStatus::Cached { "cached" } else { "completed" });
    }
    if last == Stage::Report {
        let table = std::fs::read_to_string(pipeline.out_dir().join("report.txt"))
            .map_err(|e| promptgauge::io::IoError::Io { path: "report.txt".into(), source: e })?;
        print!("{table}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
