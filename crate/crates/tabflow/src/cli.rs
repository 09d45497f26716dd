use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands;
use crate::config::RunConfig;
use crate::error::Result;
use crate::tune;

#[derive(Debug, Parser)]
#[command(name = "tabflow", version, about = "Conditional density regression on tabular data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the top-level seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the number of random splits.
    #[arg(long)]
    pub splits: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file; defaults to `<out>/model.bin`.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV to predict on; defaults to the test rows of the configured split.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on the configured split.
    Train(Common),
    /// Score a model on the test rows.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Point predictions and spread per row.
    Predict {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Draws from the predictive distribution of each row.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        input: InputArgs,
    },
    /// Risk-coverage curves and AURC for both confidence scores.
    Riskcov {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and score every split, then aggregate.
    Benchmark(Common),
    /// Random hyperparameter search.
    Tune(Common),
}

impl Common {
    pub fn load(&self) -> Result<RunConfig> {
        let mut config = RunConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(out) = &self.out {
            config.out = out.clone();
        }
        if let Some(splits) = self.splits {
            config.split.splits = splits;
        }
        config.validate()?;
        Ok(config)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(c) => commands::train(&c.load()?).map(drop),
        Command::Evaluate { common, model } => commands::evaluate(&common.load()?, model.model.as_deref()).map(drop),
        Command::Predict { common, model, input } => {
            let n = commands::predict(&common.load()?, model.model.as_deref(), input.input.as_deref())?;
            println!("wrote predictions for {n} rows");
            Ok(())
        }
        Command::Sample { common, model, input } => {
            let n = commands::sample(&common.load()?, model.model.as_deref(), input.input.as_deref())?;
            println!("wrote samples for {n} rows");
            Ok(())
        }
        Command::Riskcov { common, model } => commands::riskcov(&common.load()?, model.model.as_deref()).map(drop),
        Command::Benchmark(c) => commands::benchmark(&c.load()?).map(drop),
        Command::Tune(c) => tune::tune(&c.load()?).map(drop),
    }
}

/// Runs the CLI and maps the outcome to a process exit code.
pub fn main_with_exit_code() -> i32 {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
