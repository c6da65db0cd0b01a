use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uai_cli::{
    cmd_aggregate, cmd_cluster, cmd_demo, cmd_evaluate, cmd_explain, cmd_train, load_config,
    DEMO_FULL_CFG, DEMO_SMALL_CFG,
};
use uai_core::error::{Error, Result};
use uai_core::io::config::RunConfig;

/// Explain Bayesian neural networks: sample relevance maps over a weight
/// posterior and aggregate them into Mean, Intersection, Union and UAI+
/// explanations.
#[derive(Parser)]
#[command(name = "uai", version, about)]
struct Cli {
    /// Path to the run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Config overrides, e.g. `--set trainer.epochs=8`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Overrides the output directory (`run.out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the global seed (`run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Small,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured posterior and write `posterior.uaix`.
    Train,
    /// Sample relevances for one test image and render its aggregates.
    Explain {
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Extra percentiles to render (repeatable).
        #[arg(long = "alpha")]
        alphas: Vec<f32>,
    },
    /// Recompute aggregates from a stored relevance set.
    Aggregate {
        /// Path to a relevance-set container.
        #[arg(long)]
        input: PathBuf,
        #[arg(long = "alpha")]
        alphas: Vec<f32>,
    },
    /// Cluster a stored relevance set into explanation modes.
    Cluster {
        #[arg(long)]
        input: PathBuf,
    },
    /// Score all aggregation methods against ground-truth masks.
    Evaluate,
    /// Run the whole pipeline on synthetic data.
    Demo {
        #[arg(long, value_enum, default_value_t = Scale::Small)]
        scale: Scale,
    },
}

fn require_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| {
        Error::InvalidArgument("this command needs --config <FILE>".to_string())
    })?;
    load_config(path, &cli.sets, cli.out.as_deref(), cli.seed)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train => cmd_train(&require_config(cli)?),
        Command::Explain { index, alphas } => cmd_explain(&require_config(cli)?, *index, alphas),
        Command::Aggregate { input, alphas } => {
            cmd_aggregate(&require_config(cli)?, input, alphas)
        }
        Command::Cluster { input } => cmd_cluster(&require_config(cli)?, input),
        Command::Evaluate => cmd_evaluate(&require_config(cli)?),
        Command::Demo { scale } => {
            let text = match (&cli.config, scale) {
                (Some(path), _) => {
                    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?
                }
                (None, Scale::Small) => DEMO_SMALL_CFG.to_string(),
                (None, Scale::Full) => DEMO_FULL_CFG.to_string(),
            };
            cmd_demo(&text, &cli.sets, cli.out.as_deref(), cli.seed)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not configure {threads} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
