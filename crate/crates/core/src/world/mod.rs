//! Deterministic synthetic scenes, a noisy stand-in detector, templated
//! utterances with pointer spans, and the dataset file format.

mod config;
mod dataset;
mod detector;
mod scene;
mod utterance;
mod vocab;

pub use config::{DetectorNoise, KindMix, WorldConfig};
pub use dataset::{
    derive_seed, detection_classes, detection_labels, generate_dataset, object_inputs,
    read_dataset, write_dataset, Dataset, DatasetHeader, DatasetSummary, Split, UtteranceRecord,
    DATASET_VERSION,
};
pub use detector::{jitter_box, simulate_detector, truncated_jitter, Detection};
pub use scene::{generate_scene, latent_features, Scene, SceneObject};
pub use utterance::{
    generate_utterance, PointerSpan, Utterance, UtteranceKind, MAX_TEMPLATE_ATTEMPTS,
};
pub use vocab::{
    build_embedding_table, Vocabulary, BACKGROUND_CLASS, CLS_TOKEN, CROSS_CLUSTER_MAX_COSINE,
    EMBEDDING_DIM, MASK_TOKEN, NO_ATTRIBUTE, PAD_TOKEN, WITHIN_CLUSTER_MIN_COSINE,
};
