//! Pretraining heads and losses: masking, matching, answer classification,
//! two-image comparison, the alignment decoder, and loss aggregation.

mod alignment;
mod bundle;
mod heads;
mod masking;

pub use alignment::{alignment_loss, AlignmentDecoder, AlignmentPrediction, DEFAULT_TOP_K};
pub use bundle::{total_loss, LossBundle, LossKind, LossWeights, TermGate};
pub use heads::{
    answer_logits, cls_embedding, masking_losses, matching_logit, matching_loss,
    pair_comparison_loss, pair_logit, vqa_loss, MaskingLosses, PretrainHeads,
};
pub use masking::{
    apply_masking, draw_corruption, MaskedObject, MaskedWord, MaskingPlan, CORRUPTION_PROBABILITY,
    MASK_PROBABILITY,
};
