use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoder::{ModelConfig, TaskSizes};
use crate::error::{Error, Result};
use crate::objectives::{LossWeights, CORRUPTION_PROBABILITY, DEFAULT_TOP_K, MASK_PROBABILITY};
use crate::world::{Vocabulary, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    Toy,
    FullSize,
}

impl ModelPreset {
    pub fn model_config(self, sizes: TaskSizes) -> ModelConfig {
        match self {
            ModelPreset::Toy => ModelConfig::toy(sizes),
            ModelPreset::FullSize => ModelConfig::full_size(sizes),
        }
    }
}

/// Everything a `train` run needs. Unset optional fields resolve as follows:
/// `vqa_start_epoch` to `epochs / 2`, `warmup_steps` to a tenth of all steps,
/// `attention_layer` to the penultimate inter-modality layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: ModelPreset,
    pub loss_weights: LossWeights,
    pub p_mask: f64,
    pub p_corrupt: f64,
    pub top_k: usize,
    pub epochs: usize,
    pub vqa_start_epoch: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: Option<usize>,
    /// Linear decay to zero at the last step; constant after warmup otherwise.
    pub decay_to_zero: bool,
    pub seed: u64,
    pub dataset: PathBuf,
    pub output_dir: PathBuf,
    /// False trains without the alignment term.
    pub align: bool,
    pub attention_layer: Option<usize>,
    /// Overrides the preset's weight initialization std.
    pub init_std: Option<f64>,
    /// Caps the train split, taking records in file order.
    pub max_train_examples: Option<usize>,
    pub eval_each_epoch: bool,
    /// Keep one checkpoint file per epoch instead of overwriting `checkpoint.json`.
    pub keep_checkpoints: bool,
    /// Used by `gen-data`.
    pub world: WorldConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: ModelPreset::Toy,
            loss_weights: LossWeights::default(),
            p_mask: MASK_PROBABILITY,
            p_corrupt: CORRUPTION_PROBABILITY,
            top_k: DEFAULT_TOP_K,
            epochs: 20,
            vqa_start_epoch: None,
            batch_size: 32,
            learning_rate: 1e-3,
            warmup_steps: None,
            decay_to_zero: true,
            seed: 0,
            dataset: PathBuf::from("data/world.jsonl"),
            output_dir: PathBuf::from("runs/default"),
            align: true,
            attention_layer: None,
            init_std: None,
            max_train_examples: None,
            eval_each_epoch: true,
            keep_checkpoints: false,
            world: WorldConfig::default(),
        }
    }
}

fn check_probability(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{p} is not a probability")))
    }
}

impl RunConfig {
    /// Full-size settings: batch 512, learning rate 1e-4.
    pub fn full_size() -> Self {
        RunConfig {
            preset: ModelPreset::FullSize,
            batch_size: 512,
            learning_rate: 1e-4,
            ..RunConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            detail: e.to_string(),
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn vqa_start(&self) -> usize {
        self.vqa_start_epoch.unwrap_or(self.epochs / 2)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("p_mask", self.p_mask)?;
        check_probability("p_corrupt", self.p_corrupt)?;
        if self.top_k == 0 {
            return Err(Error::config("top_k", "must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.vqa_start() > self.epochs {
            return Err(Error::config("vqa_start_epoch", "cannot exceed epochs"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate", "must be positive"));
        }
        if let Some(std) = self.init_std {
            if !(std > 0.0 && std.is_finite()) {
                return Err(Error::config("init_std", "must be positive"));
            }
        }
        for kind in crate::objectives::LossKind::ALL {
            let w = self.loss_weights.get(kind);
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("loss_weights.{kind}"), "must be finite and non-negative"));
            }
        }
        let vocab = Vocabulary::standard();
        self.world.validate(vocab.class_names.len(), vocab.attribute_names.len())
    }

    pub fn model_config(&self, vocab: &Vocabulary, feature_dim: usize, objects: usize) -> Result<ModelConfig> {
        let sizes = TaskSizes {
            vocab_size: vocab.len(),
            class_count: vocab.class_names.len(),
            attribute_count: vocab.attribute_names.len(),
            answer_count: vocab.answer_names.len(),
            feature_dim,
        };
        let mut config = self.preset.model_config(sizes);
        if let Some(std) = self.init_std {
            config.init_std = std;
        }
        if self.preset == ModelPreset::Toy {
            config.objects = objects;
        }
        if config.objects != objects {
            return Err(Error::config(
                "preset",
                format!("{} objects per scene, preset expects {}", objects, config.objects),
            ));
        }
        config.validate()?;
        Ok(config)
    }

    /// Inter-modality layer whose word-from-object attention is probed.
    pub fn probe_layer(&self, cross_layers: usize) -> usize {
        self.attention_layer.unwrap_or(cross_layers.saturating_sub(2))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        assert_eq!(RunConfig::default().vqa_start(), 10);
        RunConfig::full_size().validate().unwrap();
    }

    #[test]
    fn bad_fields_are_named() {
        let c = RunConfig {
            p_mask: 2.0,
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("p_mask"));
        let c = RunConfig {
            vqa_start_epoch: Some(30),
            ..RunConfig::default()
        };
        assert!(c.validate().unwrap_err().to_string().contains("vqa_start_epoch"));
    }

    #[test]
    fn json_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"epochs": 4, "align": false}"#).unwrap();
        assert_eq!(c.epochs, 4);
        assert!(!c.align);
        assert_eq!(c.batch_size, 32);
        assert!(serde_json::from_str::<RunConfig>(r#"{"epoch": 4}"#).is_err());
    }

    #[test]
    fn penultimate_probe() {
        let c = RunConfig::default();
        assert_eq!(c.probe_layer(5), 3);
        assert_eq!(c.probe_layer(2), 0);
        assert_eq!(c.probe_layer(1), 0);
    }
}
