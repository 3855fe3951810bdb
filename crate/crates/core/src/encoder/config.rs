use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vocabulary and label-space sizes that come from the data rather than the
/// architecture preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSizes {
    pub vocab_size: usize,
    pub class_count: usize,
    pub attribute_count: usize,
    pub answer_count: usize,
    pub feature_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width d.
    pub d_model: usize,
    pub heads: usize,
    /// Language-side intra-modality layers.
    pub lang_layers: usize,
    /// Vision-side intra-modality layers.
    pub vision_layers: usize,
    /// Inter-modality layers.
    pub cross_layers: usize,
    /// Maximum tokens per sentence, [CLS] included.
    pub max_tokens: usize,
    /// Detections per image.
    pub objects: usize,
    pub vocab_size: usize,
    pub class_count: usize,
    pub attribute_count: usize,
    pub answer_count: usize,
    pub feature_dim: usize,
    #[serde(default = "default_ffn_mult")]
    pub ffn_mult: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_init_std")]
    pub init_std: f64,
}

fn default_ffn_mult() -> usize {
    4
}

fn default_init_std() -> f64 {
    0.02
}

impl ModelConfig {
    /// Desk-scale architecture: d=32, 4 heads, 2/2/2 layers, 12 tokens, 6 objects.
    pub fn toy(sizes: TaskSizes) -> Self {
        Self::with_shape(sizes, 32, 4, 2, 2, 2, 12, 6)
    }

    /// Full-size shape: d=768, 12 heads, 9 language / 5 vision / 5 cross layers,
    /// 20 tokens, 36 objects.
    pub fn full_size(sizes: TaskSizes) -> Self {
        Self::with_shape(sizes, 768, 12, 9, 5, 5, 20, 36)
    }

    #[allow(clippy::too_many_arguments)]
    fn with_shape(
        sizes: TaskSizes,
        d_model: usize,
        heads: usize,
        lang_layers: usize,
        vision_layers: usize,
        cross_layers: usize,
        max_tokens: usize,
        objects: usize,
    ) -> Self {
        ModelConfig {
            d_model,
            heads,
            lang_layers,
            vision_layers,
            cross_layers,
            max_tokens,
            objects,
            vocab_size: sizes.vocab_size,
            class_count: sizes.class_count,
            attribute_count: sizes.attribute_count,
            answer_count: sizes.answer_count,
            feature_dim: sizes.feature_dim,
            ffn_mult: default_ffn_mult(),
            dropout: 0.0,
            init_std: default_init_std(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("heads", self.heads),
            ("lang_layers", self.lang_layers),
            ("vision_layers", self.vision_layers),
            ("cross_layers", self.cross_layers),
            ("max_tokens", self.max_tokens),
            ("objects", self.objects),
            ("vocab_size", self.vocab_size),
            ("class_count", self.class_count),
            ("attribute_count", self.attribute_count),
            ("answer_count", self.answer_count),
            ("feature_dim", self.feature_dim),
            ("ffn_mult", self.ffn_mult),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        if self.d_model % self.heads != 0 {
            return Err(Error::config(
                "heads",
                format!(
                    "d_model {} is not divisible by {} heads",
                    self.d_model, self.heads
                ),
            ));
        }
        if self.vocab_size <= super::PAD_ID {
            return Err(Error::config(
                "vocab_size",
                "must cover the reserved [CLS]/[MASK]/[PAD] ids",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "must be in [0, 1)"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::config("init_std", "must be positive"));
        }
        Ok(())
    }
}
