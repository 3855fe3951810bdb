//! Training loop, evaluation, attention export, and the ablation driver
//! behind the command-line tool.

mod ablate;
mod config;
mod export;
mod metrics;
mod step;
mod trainer;

pub use ablate::{run_ablation, AblationReport, AblationRow, MeanStd, SeedResult, MIN_ABLATION_SEEDS};
pub use config::{ModelPreset, RunConfig};
pub use export::{
    export_attention, read_matrix_csv, write_matrix_csv, AttentionSidecar, ObjectDescriptor, PredictedAnswer,
};
pub use metrics::{evaluate, Evaluator, MetricsReport};
pub use step::{example_loss, ExampleLoss, ScenePool, StepContext};
pub use trainer::{
    load_checkpoint, model_config_for, train, train_on, LogLine, TrainOutcome, CHECKPOINT_FILE, METRICS_FILE,
};
