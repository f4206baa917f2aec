//! Command-line front end for the roof-material pipeline.

pub mod args;
pub mod commands;
pub mod dataset;
pub mod manifest;
pub mod pipeline;

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{Context, Result};

use args::{Cli, Command};
use manifest::{build_manifest, write_atomic};

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Ingest(_) => "ingest",
            Command::Chip(_) => "chip",
            Command::AdaptWeights(_) => "adapt-weights",
            Command::AugmentPreview(_) => "augment-preview",
            Command::Folds(_) => "folds",
            Command::Oof(_) => "oof",
            Command::Features(_) => "features",
            Command::TrainStack(_) => "train-stack",
            Command::Predict(_) => "predict",
            Command::Evaluate(_) => "evaluate",
            Command::Report(_) => "report",
        }
    }
}

/// Runs one command and writes its manifest.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let start = Instant::now();
    let outcome = match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Chip(a) => commands::chip(a),
        Command::AdaptWeights(a) => commands::adapt_weights(a),
        Command::AugmentPreview(a) => commands::augment_preview(a),
        Command::Folds(a) => commands::folds(a),
        Command::Oof(a) => commands::oof(a),
        Command::Features(a) => commands::features(a),
        Command::TrainStack(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate_cmd(a),
        Command::Report(a) => commands::report(a),
    }?;
    let path: PathBuf = cli.manifest.clone().unwrap_or_else(|| outcome.manifest_path.clone());
    if path.as_os_str().is_empty() {
        return Ok(());
    }
    let config = serde_json::to_value(&cli.command)?;
    let m = build_manifest(cli.command.name(), config, &outcome, start.elapsed().as_millis())?;
    let mut bytes = serde_json::to_vec_pretty(&m)?;
    bytes.push(b'\n');
    write_atomic(&path, &bytes)?;
    log::info!("manifest written to {}", path.display());
    Ok(())
}
