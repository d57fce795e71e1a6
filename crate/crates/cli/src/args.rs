use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "drr", version, about = "Conditional neural field surrogates with baked refinement")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config value by dotted path, e.g. `train.lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cond,
    Spatiocond,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize an ensemble from an analytic generator.
    Gen,
    /// Train a model on a dataset.
    Train {
        #[arg(long, value_enum)]
        task: Option<Task>,
    },
    /// Precompute refined structures into a baked artifact.
    Bake {
        checkpoint: PathBuf,
        /// Keep the trainable weights inside the baked artifact.
        #[arg(long)]
        retain: bool,
    },
    /// Evaluate a trained or baked model.
    Eval {
        #[arg(long, value_enum)]
        task: Option<Task>,
    },
    /// Train one model per augmentation threshold.
    Sweep,
    /// Serve a baked model over HTTP.
    Serve {
        artifact: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
}
