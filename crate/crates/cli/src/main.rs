//! `odx` — batch pipeline for drug overdose risk prediction from
//! longitudinal claims data.
//!
//! Typical flow over synthetic data:
//!
//! ```text
//! odx synth
//! odx cohort --split train && odx cohort --split valid && odx cohort --split test
//! odx featurize && odx train --model both
//! odx predict --predictor boost --split test && odx evaluate --predictor boost --split test
//! odx predict --predictor llm --split test && odx evaluate --predictor llm --split test
//! odx sweep --split test ; odx ablate --split test ; odx cost --split test
//! ```
//!
//! Exit status: 0 success, 1 validation error, 2 runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use odx_core::error::{Error, Result};
use odx_core::synth::Split;

use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "odx",
    version,
    about = "Drug overdose risk prediction over longitudinal claims"
)]
struct Cli {
    /// JSON pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override (generation and training).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Prediction window in days (7 or 30).
    #[arg(long, global = true)]
    window: Option<u32>,

    /// Visit limit for rendering and vectorization.
    #[arg(long = "max-visits", global = true)]
    max_visits: Option<usize>,

    /// Prompt format (detailed-descriptive, detailed-code,
    /// summarized-descriptive, summarized-code).
    #[arg(long, global = true)]
    format: Option<String>,

    /// Field mask, e.g. `dx,proc,rx`.
    #[arg(long, global = true)]
    mask: Option<String>,

    /// Worker threads (defaults to the number of execution units).
    #[arg(long, global = true)]
    parallelism: Option<usize>,

    /// How evaluation scores failed predictions
    /// (score-as-negative or exclude).
    #[arg(long = "failure-policy", global = true)]
    failure_policy: Option<String>,

    /// Permit windows outside {7, 30}.
    #[arg(long = "allow-any-window", global = true)]
    allow_any_window: bool,

    /// Emit machine-readable error JSON on stderr.
    #[arg(long = "json-errors", global = true)]
    json_errors: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic train/valid/test claims tables.
    Synth,
    /// Parse one split's CSV tables into patient records.
    Ingest {
        #[arg(long)]
        split: String,
    },
    /// Classify, align, and truncate one split into prediction instances.
    Cohort {
        #[arg(long)]
        split: String,
    },
    /// Render one split's instances into prompts.jsonl.
    Render {
        #[arg(long)]
        split: String,
    },
    /// Build the vocabulary from the train split and vectorize all splits.
    Featurize,
    /// Grid-search the tree baselines on train/valid.
    Train {
        /// forest, boost, or both.
        #[arg(long, default_value = "both")]
        model: String,
    },
    /// Produce predictions for one split.
    Predict {
        /// forest, boost, or llm.
        #[arg(long)]
        predictor: String,
        #[arg(long)]
        split: String,
    },
    /// Score predictions and print the metrics table.
    Evaluate {
        #[arg(long, default_value = "llm")]
        predictor: String,
        #[arg(long)]
        split: String,
        /// Explicit predictions file (defaults to the predictor's output).
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// Re-render and score at visit limits 5/10/20/30/40.
    Sweep {
        #[arg(long)]
        split: String,
    },
    /// Score all seven field combinations.
    Ablate {
        #[arg(long)]
        split: String,
    },
    /// Average per-instance API cost for each prompt format.
    Cost {
        #[arg(long)]
        split: String,
    },
    /// Export the split as chat-format fine-tuning records.
    ExportFinetune {
        #[arg(long)]
        split: String,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(window) = cli.window {
        config.window_days = window;
    }
    if let Some(max_visits) = cli.max_visits {
        config.max_visits = max_visits;
    }
    if let Some(format) = &cli.format {
        config.format = format.parse()?;
    }
    if let Some(mask) = &cli.mask {
        config.mask = mask.clone();
    }
    if let Some(parallelism) = cli.parallelism {
        config.parallelism = Some(parallelism);
    }
    if let Some(policy) = &cli.failure_policy {
        config.failure_policy = match policy.as_str() {
            "score-as-negative" => odx_core::eval::FailurePolicy::ScoreAsNegative,
            "exclude" => odx_core::eval::FailurePolicy::Exclude,
            other => {
                return Err(Error::Validation(format!(
                    "unknown failure policy {other:?} (expected score-as-negative, exclude)"
                )))
            }
        };
    }
    if cli.allow_any_window {
        config.allow_any_window = true;
    }
    config.finalize()?;
    Ok(config)
}

fn dispatch(command: &Command, config: &PipelineConfig) -> Result<()> {
    let split = |s: &str| Split::from_str(s);
    match command {
        Command::Synth => commands::cmd_synth(config),
        Command::Ingest { split: s } => commands::cmd_ingest(config, split(s)?),
        Command::Cohort { split: s } => commands::cmd_cohort(config, split(s)?),
        Command::Render { split: s } => commands::cmd_render(config, split(s)?),
        Command::Featurize => commands::cmd_featurize(config),
        Command::Train { model } => commands::cmd_train(config, model),
        Command::Predict {
            predictor,
            split: s,
        } => commands::cmd_predict(config, predictor, split(s)?),
        Command::Evaluate {
            predictor,
            split: s,
            predictions,
        } => commands::cmd_evaluate(config, split(s)?, predictor, predictions.as_deref()),
        Command::Sweep { split: s } => commands::cmd_sweep(config, split(s)?),
        Command::Ablate { split: s } => commands::cmd_ablate(config, split(s)?),
        Command::Cost { split: s } => commands::cmd_cost(config, split(s)?),
        Command::ExportFinetune { split: s } => commands::cmd_export_finetune(config, split(s)?),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Synth => "synth",
        Command::Ingest { .. } => "ingest",
        Command::Cohort { .. } => "cohort",
        Command::Render { .. } => "render",
        Command::Featurize => "featurize",
        Command::Train { .. } => "train",
        Command::Predict { .. } => "predict",
        Command::Evaluate { .. } => "evaluate",
        Command::Sweep { .. } => "sweep",
        Command::Ablate { .. } => "ablate",
        Command::Cost { .. } => "cost",
        Command::ExportFinetune { .. } => "export-finetune",
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = load_config(cli)?;
    commands::append_run_manifest(&config, command_name(&cli.command))?;
    match config.parallelism {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| dispatch(&cli.command, &config))
        }
        None => dispatch(&cli.command, &config),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(error) = run(&cli) {
        let exit = if error.is_validation() { 1 } else { 2 };
        if cli.json_errors {
            let kind = if exit == 1 { "validation" } else { "runtime" };
            eprintln!(
                "{}",
                serde_json::json!({ "error": { "kind": kind, "message": error.to_string() } })
            );
        } else {
            eprintln!("error: {error}");
        }
        std::process::exit(exit);
    }
}
