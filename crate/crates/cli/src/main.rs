use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tokprune_cli::commands::{
    classify_difficulty_cmd, credit_demo_cmd, evaluate_cmd, generate_suite_cmd, granularity_cmd, sweep_budget_cmd,
    train_cmd, CommandOutput,
};
use tokprune_cli::config::{Split, THREADS_ENV};
use tokprune_cli::{CliError, CliResult, ExperimentConfig};
use tokprune_core::grpo::CulpritEnvironment;

/// Budget-aware token pruning on synthetic environments.
#[derive(Parser, Debug)]
#[command(name = "tokprune", version, about, after_help = "Typical run:
  tokprune init-config -o exp.toml
  tokprune generate-suite -c exp.toml
  tokprune train -c exp.toml --threads 1
  tokprune evaluate -c exp.toml

TOKPRUNE_OUTPUT_DIR overrides output_dir from the config; TOKPRUNE_THREADS sets --threads.")]
struct Cli {
    /// Worker threads. 1 gives the bit-reproducible sequential mode.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a config file with every default spelled out.
    #[command(after_help = "Example: tokprune init-config -o exp.toml")]
    InitConfig {
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Generate the train and eval suites under <output_dir>/tasks.
    #[command(after_help = "Example: tokprune generate-suite -c exp.toml")]
    GenerateSuite {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Stage I distillation then Stage II policy optimization on the train suite.
    #[command(after_help = "Example: tokprune train -c exp.toml --threads 1")]
    Train {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Accuracy per level, T_eq, FLOP proxy and granularity on the eval suite.
    #[command(after_help = "Example: tokprune evaluate -c exp.toml --checkpoint runs/a/checkpoints/rl.ckpt --budgets 0.5,0.25")]
    Evaluate {
        #[arg(short, long)]
        config: PathBuf,
        /// Defaults to the trained sft and rl checkpoints.
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Keep ratios; defaults to evaluation.keep_ratios.
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Correctness curves and transition-count levels for every task.
    #[command(after_help = "Example: tokprune classify-difficulty -c exp.toml --split eval")]
    ClassifyDifficulty {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        /// Use a learned policy instead of the heuristic.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Max component ratio and spatial entropy of kept tokens.
    #[command(after_help = "Example: tokprune granularity -c exp.toml --budgets 0.25,0.5")]
    Granularity {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<f64>>,
    },
    /// Three-token culprit experiment: set-level gradients against the group estimator.
    #[command(after_help = "Example: tokprune credit-demo --rollouts 100000 --output credit.json")]
    CreditDemo {
        #[arg(long, default_value_t = 100_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        keep_prob: f64,
        /// Also write the report as JSON.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Accuracy across a range of keep ratios.
    #[command(after_help = "Example: tokprune sweep-budget -c exp.toml --ratios 0.1,0.3,0.5,0.7,0.9")]
    SweepBudget {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Vec<PathBuf>,
        /// Defaults to 0.1, 0.2, ..., 1.0.
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
    },
}

fn run(cli: Cli) -> CliResult<CommandOutput> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    match cli.command {
        Command::InitConfig { output } => {
            let text = ExperimentConfig::default().to_toml()?;
            std::fs::write(&output, text).map_err(|e| CliError::io(&output, e))?;
            Ok(CommandOutput {
                summary: format!("wrote {}\n", output.display()),
                warnings: Vec::new(),
            })
        }
        Command::GenerateSuite { config } => generate_suite_cmd(&ExperimentConfig::load(&config)?),
        Command::Train { config } => train_cmd(&ExperimentConfig::load(&config)?),
        Command::Evaluate {
            config,
            checkpoint,
            budgets,
        } => evaluate_cmd(&ExperimentConfig::load(&config)?, &checkpoint, budgets),
        Command::ClassifyDifficulty {
            config,
            split,
            checkpoint,
        } => classify_difficulty_cmd(&ExperimentConfig::load(&config)?, split, checkpoint.as_deref()),
        Command::Granularity {
            config,
            checkpoint,
            budgets,
        } => granularity_cmd(&ExperimentConfig::load(&config)?, &checkpoint, budgets),
        Command::CreditDemo {
            rollouts,
            seed,
            keep_prob,
            output,
        } => {
            let env = CulpritEnvironment {
                keep_prob,
                ..CulpritEnvironment::default()
            };
            credit_demo_cmd(&env, rollouts, seed, output.as_deref())
        }
        Command::SweepBudget {
            config,
            checkpoint,
            ratios,
        } => sweep_budget_cmd(&ExperimentConfig::load(&config)?, &checkpoint, ratios),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print!("{}", out.summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
