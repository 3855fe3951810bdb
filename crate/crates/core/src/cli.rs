//! Subcommands of the `vlalign` binary. Each returns the text it prints on
//! success; the binary turns errors into a one-line JSON message.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::train::{
    evaluate, export_attention, load_checkpoint, run_ablation, train, Evaluator, MetricsReport, RunConfig,
};
use crate::world::{generate_dataset, read_dataset, write_dataset, Split};

#[derive(Debug, Parser)]
#[command(name = "vlalign", version, about = "Vision-language pretraining with weak object-word alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset described by the config's `world` section.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes metrics.jsonl and checkpoint.json to the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Train without the alignment loss.
        #[arg(long)]
        no_align: bool,
    },
    /// Evaluate a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "eval")]
        split: Split,
        /// Inter-modality layer probed for alignment recall.
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Write word-from-object cross-attention of one example as CSV + JSON sidecar.
    ExportAttention {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        example: usize,
        #[arg(long)]
        layer: usize,
        #[arg(long)]
        sum_heads: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Paired runs with and without the alignment loss over several seeds.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Lower-case hex SHA-256 of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<serde_json::Value> {
    config.validate()?;
    let dataset = generate_dataset(&config.world)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_dataset(out, &dataset)?;
    Ok(json!({
        "path": out,
        "sha256": file_sha256(out)?,
        "summary": dataset.summary(),
    }))
}

/// Loads a checkpoint and scores one split of `dataset_path`.
pub fn cmd_eval(checkpoint: &Path, dataset_path: &Path, split: Split, layer: Option<usize>) -> Result<MetricsReport> {
    let (model, store, run) = load_checkpoint(checkpoint)?;
    let dataset = read_dataset(dataset_path)?;
    let expected = crate::train::model_config_for(&run, &dataset)?;
    for (name, have, want) in [
        ("vocab_size", model.config.vocab_size, expected.vocab_size),
        ("feature_dim", model.config.feature_dim, expected.feature_dim),
        ("objects", model.config.objects, expected.objects),
        ("answer_count", model.config.answer_count, expected.answer_count),
    ] {
        if have != want {
            return Err(Error::Checkpoint(format!("{name} is {have} in checkpoint, dataset needs {want}")));
        }
    }
    let table = dataset.embedding_table()?;
    let records: Vec<_> = dataset.records.iter().collect();
    let ev = Evaluator {
        model: &model,
        store: &store,
        vocab: dataset.vocab(),
        table: &table,
        top_k: run.top_k,
        attention_layer: layer.unwrap_or_else(|| run.probe_layer(model.config.cross_layers)),
    };
    evaluate(&ev, &records, split)
}

pub fn run(cli: Cli) -> Result<String> {
    match cli.command {
        Command::GenData { config, out } => {
            let config = load_config(config.as_deref())?;
            Ok(serde_json::to_string_pretty(&cmd_gen_data(&config, &out)?)?)
        }
        Command::Train {
            config,
            dataset,
            output_dir,
            no_align,
        } => {
            let mut config = load_config(config.as_deref())?;
            if let Some(d) = dataset {
                config.dataset = d;
            }
            if let Some(o) = output_dir {
                config.output_dir = o;
            }
            if no_align {
                config.align = false;
            }
            let outcome = train(&config)?;
            Ok(serde_json::to_string_pretty(&json!({
                "steps": outcome.steps,
                "checkpoint": outcome.checkpoint,
                "metrics_log": outcome.log,
                "final_eval": outcome.final_eval,
            }))?)
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            layer,
        } => Ok(serde_json::to_string_pretty(&cmd_eval(&checkpoint, &dataset, split, layer)?)?),
        Command::ExportAttention {
            checkpoint,
            dataset,
            example,
            layer,
            sum_heads,
            out_dir,
        } => {
            let (model, store, _) = load_checkpoint(&checkpoint)?;
            let dataset = read_dataset(&dataset)?;
            let files = export_attention(&model, &store, &dataset, example, layer, sum_heads, &out_dir)?;
            Ok(serde_json::to_string_pretty(&json!({ "files": files }))?)
        }
        Command::Ablate { config, seeds, out_dir } => {
            let config = load_config(config.as_deref())?;
            let out_dir = out_dir.unwrap_or_else(|| config.output_dir.join("ablation"));
            let dataset = read_dataset(&config.dataset)?;
            Ok(run_ablation(&config, &dataset, &seeds, &out_dir)?.table())
        }
    }
}
