use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::metrics::{evaluate, Evaluator, MetricsReport};
use super::step::{example_loss, ScenePool, StepContext};
use super::RunConfig;
use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::{AdamState, Checkpoint, DropoutCtx, Graph, LrSchedule, ParamStore};
use crate::objectives::LossKind;
use crate::world::{derive_seed, read_dataset, Dataset, Split, UtteranceRecord};

const STREAM_INIT: u64 = 101;
const STREAM_TRAIN: u64 = 102;
const STREAM_DROPOUT: u64 = 103;

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Step {
        step: usize,
        epoch: usize,
        losses: BTreeMap<LossKind, f64>,
        total: f64,
        lr: f64,
    },
    Epoch {
        epoch: usize,
        steps: usize,
        train_losses: BTreeMap<LossKind, f64>,
        eval: Option<MetricsReport>,
    },
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub store: ParamStore,
    pub adam: AdamState,
    pub steps: usize,
    pub epochs: Vec<LogLine>,
    pub final_eval: Option<MetricsReport>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

#[derive(Default)]
struct TermMeans(BTreeMap<LossKind, (f64, usize)>);

impl TermMeans {
    fn add(&mut self, kind: LossKind, v: f64) {
        let e = self.0.entry(kind).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }

    fn means(&self) -> BTreeMap<LossKind, f64> {
        self.0.iter().map(|(k, (s, n))| (*k, s / *n as f64)).collect()
    }
}

/// Reads the dataset named in the config and trains on it.
pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let dataset = read_dataset(&config.dataset)?;
    train_on(config, &dataset)
}

pub fn model_config_for(config: &RunConfig, dataset: &Dataset) -> Result<ModelConfig> {
    let first = dataset
        .records
        .first()
        .ok_or_else(|| Error::config("dataset", "contains no records"))?;
    let feature_dim = first.detections[0]
        .first()
        .map(|d| d.features.len())
        .ok_or_else(|| Error::config("dataset", "record without detections"))?;
    let objects = dataset.header.world_config.detections_per_scene;
    config.model_config(dataset.vocab(), feature_dim, objects)
}

fn checkpoint_metadata(config: &RunConfig, model: &ModelConfig, epoch: usize, step: usize) -> serde_json::Value {
    json!({
        "model_config": model,
        "run_config": config,
        "epoch": epoch,
        "step": step,
    })
}

/// Rebuilds the model stored in a checkpoint. Returns the run config it was
/// trained with.
pub fn load_checkpoint(path: &Path) -> Result<(Model, ParamStore, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let model_config: ModelConfig = serde_json::from_value(ck.metadata["model_config"].clone())
        .map_err(|e| Error::Checkpoint(format!("model_config: {e}")))?;
    let run_config: RunConfig = serde_json::from_value(ck.metadata["run_config"].clone())
        .map_err(|e| Error::Checkpoint(format!("run_config: {e}")))?;
    let (model, mut store) = Model::build(&model_config, 0)?;
    ck.restore(&mut store)?;
    Ok((model, store, run_config))
}

/// Multi-objective training. Each step draws a shuffled mini-batch, builds
/// every example's loss on its own tape, averages the gradients, and applies
/// one Adam update. The log and all checkpoints go to `config.output_dir`.
pub fn train_on(config: &RunConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = dataset.vocab();
    let table = dataset.embedding_table()?;
    let model_config = model_config_for(config, dataset)?;
    let (model, mut store) = Model::build(&model_config, derive_seed(config.seed, STREAM_INIT, 0))?;

    let mut train: Vec<&UtteranceRecord> = dataset.split(Split::Train).collect();
    if let Some(cap) = config.max_train_examples {
        train.truncate(cap);
    }
    if train.is_empty() {
        return Err(Error::config("dataset", "has no train records"));
    }
    let eval: Vec<&UtteranceRecord> = dataset.split(Split::Eval).collect();
    let pool = ScenePool::from_records(train.iter().copied());

    let steps_per_epoch = train.len().div_ceil(config.batch_size);
    let total_steps = steps_per_epoch * config.epochs;
    let schedule = LrSchedule {
        warmup_steps: config.warmup_steps.unwrap_or(total_steps / 10),
        total_steps: config.decay_to_zero.then_some(total_steps),
    };
    let mut adam = AdamState::new(&store, config.learning_rate, schedule);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_TRAIN, 0));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_DROPOUT, 0));

    let out_dir = &config.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    config.save(&out_dir.join("config.json"))?;
    let log_path = out_dir.join(METRICS_FILE);
    let file = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let mut write_log = |line: &LogLine| -> Result<()> {
        let text = serde_json::to_string(line)?;
        writeln!(log, "{text}")
            .and_then(|_| log.flush())
            .map_err(|e| Error::io(&log_path, e))
    };

    let probe_layer = config.probe_layer(model_config.cross_layers);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut final_eval = None;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_terms = TermMeans::default();
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let mut batch_terms = TermMeans::default();
            let mut batch_total = 0.0;
            for &i in batch {
                let ctx = StepContext {
                    model: &model,
                    vocab,
                    table: &table,
                    pool: &pool,
                    config,
                    epoch,
                };
                let grads = {
                    let mut g = Graph::new(&store);
                    if model_config.dropout > 0.0 {
                        g = g.with_dropout(DropoutCtx {
                            rate: model_config.dropout,
                            rng: &mut dropout_rng,
                        });
                    }
                    let ex = example_loss(&mut g, &ctx, train[i], &mut rng).map_err(|e| match e {
                        Error::NonFinite { .. } => Error::NonFiniteLoss { step },
                        other => other,
                    })?;
                    if !ex.bundle.total.is_finite() {
                        return Err(Error::NonFiniteLoss { step });
                    }
                    for (k, v) in &ex.bundle.terms {
                        batch_terms.add(*k, *v);
                        epoch_terms.add(*k, *v);
                    }
                    batch_total += ex.bundle.total;
                    g.backward(ex.total)?
                };
                grads.accumulate_into(&mut store);
            }
            store.scale_grads(1.0 / batch.len() as f64);
            let lr = adam.step(&mut store)?;
            store.zero_grads();
            write_log(&LogLine::Step {
                step,
                epoch,
                losses: batch_terms.means(),
                total: batch_total / batch.len() as f64,
                lr,
            })?;
        }
        let last = epoch + 1 == config.epochs;
        let metrics = if (config.eval_each_epoch || last) && !eval.is_empty() {
            let ev = Evaluator {
                model: &model,
                store: &store,
                vocab,
                table: &table,
                top_k: config.top_k,
                attention_layer: probe_layer,
            };
            Some(evaluate(&ev, &eval, Split::Eval)?)
        } else {
            None
        };
        let line = LogLine::Epoch {
            epoch,
            steps: step,
            train_losses: epoch_terms.means(),
            eval: metrics.clone(),
        };
        write_log(&line)?;
        epochs.push(line);
        if last {
            final_eval = metrics;
        }
        let ck = Checkpoint::capture(
            &store,
            Some(&adam),
            checkpoint_metadata(config, &model_config, epoch, step),
        );
        ck.save(&checkpoint_path)?;
        if config.keep_checkpoints {
            ck.save(&out_dir.join(format!("checkpoint-epoch-{epoch:03}.json")))?;
        }
    }
    Ok(TrainOutcome {
        model,
        store,
        adam,
        steps: step,
        epochs,
        final_eval,
        checkpoint: checkpoint_path,
        log: log_path,
    })
}
