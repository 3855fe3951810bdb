use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{ObjectInput, TokenSequence, CLS_ID, MASK_ID};

/// Default masking probability for words and objects.
pub const MASK_PROBABILITY: f64 = 0.15;

/// Default probability of replacing the image of a pair.
pub const CORRUPTION_PROBABILITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedWord {
    pub position: usize,
    pub original_id: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedObject {
    pub index: usize,
    /// Detector class prediction, used as the class target.
    pub class: usize,
    /// Detector attribute prediction, used as the attribute target.
    pub attribute: usize,
    pub features: Vec<f64>,
}

/// Ground truth for everything hidden by [`apply_masking`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskingPlan {
    pub words: Vec<MaskedWord>,
    pub objects: Vec<MaskedObject>,
}

impl MaskingPlan {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty() && self.objects.is_empty()
    }
}

/// Masks every real non-[CLS] token and every object independently with
/// probability `p_mask`. Masked tokens become [MASK]; masked objects keep
/// their box and get zeroed features. One uniform draw per candidate, tokens
/// first, in order.
pub fn apply_masking<R: Rng + ?Sized>(
    tokens: &TokenSequence,
    objects: &[ObjectInput],
    labels: &[(usize, usize)],
    p_mask: f64,
    rng: &mut R,
) -> (TokenSequence, Vec<ObjectInput>, MaskingPlan) {
    assert_eq!(
        objects.len(),
        labels.len(),
        "one (class, attribute) label per object"
    );
    let mut masked_tokens = tokens.clone();
    let mut plan = MaskingPlan::default();
    for position in 0..tokens.len() {
        if !tokens.valid()[position] || tokens.ids()[position] == CLS_ID {
            continue;
        }
        if rng.gen::<f64>() < p_mask {
            plan.words.push(MaskedWord {
                position,
                original_id: tokens.ids()[position],
            });
            masked_tokens = masked_tokens.with_id(position, MASK_ID);
        }
    }
    let mut masked_objects = objects.to_vec();
    for (index, (obj, &(class, attribute))) in objects.iter().zip(labels).enumerate() {
        if rng.gen::<f64>() < p_mask {
            plan.objects.push(MaskedObject {
                index,
                class,
                attribute,
                features: obj.features.clone(),
            });
            masked_objects[index]
                .features
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    (masked_tokens, masked_objects, plan)
}

/// True when the pair should be corrupted (image replaced).
pub fn draw_corruption<R: Rng + ?Sized>(p_corrupt: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() < p_corrupt
}
