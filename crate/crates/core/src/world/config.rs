use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Noise model of the simulated detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorNoise {
    /// Standard deviation of the per-coordinate box jitter, truncated at ±2σ.
    pub jitter_sigma: f64,
    pub class_confusion: f64,
    pub attribute_confusion: f64,
    pub drop: f64,
}

impl Default for DetectorNoise {
    fn default() -> Self {
        DetectorNoise {
            jitter_sigma: 0.05,
            class_confusion: 0.1,
            attribute_confusion: 0.1,
            drop: 0.1,
        }
    }
}

impl DetectorNoise {
    pub fn none() -> Self {
        DetectorNoise {
            jitter_sigma: 0.0,
            class_confusion: 0.0,
            attribute_confusion: 0.0,
            drop: 0.0,
        }
    }
}

/// Relative frequencies of the three utterance kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KindMix {
    pub caption: f64,
    pub question: f64,
    pub pair: f64,
}

impl Default for KindMix {
    fn default() -> Self {
        KindMix {
            caption: 0.4,
            question: 0.45,
            pair: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub seed: u64,
    pub scenes: usize,
    /// Leading fraction of scenes used by the train split.
    pub train_fraction: f64,
    pub train_utterances: usize,
    pub eval_utterances: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Detector rows per scene, padded with background.
    pub detections_per_scene: usize,
    pub feature_dim: usize,
    pub feature_noise: f64,
    pub min_box_size: f64,
    pub max_box_size: f64,
    pub max_ground_truth_iou: f64,
    pub max_placement_attempts: usize,
    pub detector: DetectorNoise,
    /// Probability that an utterance carries pointer spans.
    pub annotation_rate: f64,
    pub kind_mix: KindMix,
    /// Token budget including [CLS].
    pub max_tokens: usize,
    pub embedding_seed: u64,
    pub embedding_dim: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            scenes: 800,
            train_fraction: 0.8,
            train_utterances: 2000,
            eval_utterances: 400,
            min_objects: 2,
            max_objects: 5,
            detections_per_scene: 6,
            feature_dim: 32,
            feature_noise: 0.05,
            min_box_size: 0.12,
            max_box_size: 0.3,
            max_ground_truth_iou: 0.3,
            max_placement_attempts: 1000,
            detector: DetectorNoise::default(),
            annotation_rate: 0.7,
            kind_mix: KindMix::default(),
            max_tokens: 12,
            embedding_seed: 17,
            embedding_dim: super::EMBEDDING_DIM,
        }
    }
}

fn probability(field: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::config(field, format!("{p} is not a probability")))
    }
}

impl WorldConfig {
    /// Scenes `0..train_scenes()` feed the train split, the rest the eval split.
    pub fn train_scenes(&self) -> usize {
        ((self.scenes as f64) * self.train_fraction).round() as usize
    }

    pub fn validate(&self, class_count: usize, attribute_count: usize) -> Result<()> {
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err(Error::config(
                "min_objects",
                "need 1 <= min_objects <= max_objects",
            ));
        }
        if self.max_objects > self.detections_per_scene {
            return Err(Error::config(
                "max_objects",
                "cannot exceed detections_per_scene",
            ));
        }
        let needed = class_count + attribute_count + 7;
        if self.feature_dim < needed {
            return Err(Error::config(
                "feature_dim",
                format!("must be at least {needed}"),
            ));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config(
                "feature_noise",
                "must be finite and non-negative",
            ));
        }
        if !(self.min_box_size > 0.0
            && self.min_box_size <= self.max_box_size
            && self.max_box_size < 1.0)
        {
            return Err(Error::config(
                "min_box_size",
                "need 0 < min_box_size <= max_box_size < 1",
            ));
        }
        if !(0.0..=1.0).contains(&self.max_ground_truth_iou) {
            return Err(Error::config("max_ground_truth_iou", "must lie in [0, 1]"));
        }
        if self.max_placement_attempts == 0 {
            return Err(Error::config("max_placement_attempts", "must be positive"));
        }
        if !(self.detector.jitter_sigma >= 0.0 && self.detector.jitter_sigma.is_finite()) {
            return Err(Error::config(
                "detector.jitter_sigma",
                "must be finite and non-negative",
            ));
        }
        probability("detector.class_confusion", self.detector.class_confusion)?;
        probability(
            "detector.attribute_confusion",
            self.detector.attribute_confusion,
        )?;
        probability("detector.drop", self.detector.drop)?;
        probability("annotation_rate", self.annotation_rate)?;
        probability("train_fraction", self.train_fraction)?;
        let mix = &self.kind_mix;
        for (name, w) in [
            ("kind_mix.caption", mix.caption),
            ("kind_mix.question", mix.question),
            ("kind_mix.pair", mix.pair),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(name, "must be finite and non-negative"));
            }
        }
        if mix.caption + mix.question + mix.pair <= 0.0 {
            return Err(Error::config(
                "kind_mix",
                "at least one kind needs positive weight",
            ));
        }
        let train = self.train_scenes();
        if self.train_utterances > 0 && train == 0 {
            return Err(Error::config("train_fraction", "leaves no train scenes"));
        }
        if self.eval_utterances > 0 && train >= self.scenes {
            return Err(Error::config("train_fraction", "leaves no eval scenes"));
        }
        if mix.pair > 0.0 && (train == 1 || self.scenes - train == 1) {
            return Err(Error::config(
                "scenes",
                "pair statements need two scenes per split",
            ));
        }
        if self.max_tokens < 12 {
            return Err(Error::config("max_tokens", "templates need 12 tokens"));
        }
        Ok(())
    }
}
