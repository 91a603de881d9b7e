//! `faultdg`: synthetic data, both training stages, streaming evaluation and
//! pipeline comparison for domain-generalized gearbox fault diagnosis.

mod commands;
mod manifest;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use faultdg_core::mldg::MetaMode;
use faultdg_core::sim::FaultClass;
use faultdg_core::stream::{PipelineKind, ScenarioKind};

#[derive(Parser, Debug)]
#[command(name = "faultdg", version, about = "Domain-generalized gearbox fault diagnosis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by every subcommand. Flags override the config file,
/// which overrides the built-in defaults.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// TOML (or JSON) experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Root seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Offline windows per (condition, class).
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub meta_mode: Option<MetaMode>,
    /// Training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Outer learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the offline dataset and the stream descriptors of a scenario.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "variable-speed")]
        scenario: ScenarioKind,
        /// Restrict streams to one fault (default: all three).
        #[arg(long)]
        fault: Option<FaultClass>,
        /// Also write each stream as an eight-column CSV recording.
        #[arg(long)]
        stream_csv: bool,
    },
    /// Train the encoder and MLP head with the meta objective.
    TrainDge {
        #[command(flatten)]
        common: Common,
        /// Dataset prefix (`<prefix>.json` + `<prefix>.bin`).
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "variable-speed")]
        scenario: ScenarioKind,
    },
    /// Dump encoder features of a dataset as CSV.
    ExportFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Encoder checkpoint prefix.
        #[arg(long)]
        model: PathBuf,
    },
    /// Fit an RVFL classifier on exported features, or on raw windows.
    TrainRvfl {
        #[command(flatten)]
        common: Common,
        /// Feature CSV from `export-features`.
        #[arg(long, conflicts_with = "data")]
        features: Option<PathBuf>,
        /// Dataset prefix; trains on flattened standardized windows.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "variable-speed")]
        scenario: ScenarioKind,
    },
    /// Replay one stream through one pipeline.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Stream descriptor written by `synth`.
        #[arg(long)]
        stream: PathBuf,
        #[arg(long)]
        pipeline: PipelineKind,
        /// Dataset prefix whose standardizer is applied to the stream.
        #[arg(long)]
        data: PathBuf,
        /// Encoder checkpoint prefix (e2e, two-stage).
        #[arg(long)]
        model: Option<PathBuf>,
        /// RVFL checkpoint prefix (two-stage, raw-rvfl).
        #[arg(long)]
        rvfl: Option<PathBuf>,
    },
    /// Train and evaluate every pipeline over scenarios, faults and seeds.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Repeatable; default both.
        #[arg(long)]
        scenario: Vec<ScenarioKind>,
        /// Repeatable; default all three.
        #[arg(long)]
        fault: Vec<FaultClass>,
        /// Repeatable; default all three.
        #[arg(long)]
        pipeline: Vec<PipelineKind>,
        /// Number of seeds, counted up from the root seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Worker threads (0: available parallelism).
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Synth {
            common,
            scenario,
            fault,
            stream_csv,
        } => commands::synth(&common, scenario, fault, stream_csv),
        Command::TrainDge { common, data, scenario } => commands::train_dge(&common, &data, scenario),
        Command::ExportFeatures { common, data, model } => commands::export_features(&common, &data, &model),
        Command::TrainRvfl {
            common,
            features,
            data,
            scenario,
        } => commands::train_rvfl(&common, features.as_deref(), data.as_deref(), scenario),
        Command::Eval {
            common,
            stream,
            pipeline,
            data,
            model,
            rvfl,
        } => commands::eval(&common, &stream, pipeline, &data, model.as_deref(), rvfl.as_deref()),
        Command::Compare {
            common,
            scenario,
            fault,
            pipeline,
            seeds,
            threads,
        } => commands::compare(&common, &scenario, &fault, &pipeline, seeds, threads),
    }
}
