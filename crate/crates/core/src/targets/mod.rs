//! Weak soft-alignment targets from pointer boxes and noisy detections.

mod bbox;
mod semantic;
mod soft;

pub use bbox::{iou, BBox};
pub use semantic::{semantic_score, EmbeddingTable, ATTRIBUTE_WEIGHT, CLASS_WEIGHT};
pub use soft::{build_soft_targets, AlignmentTarget, DetectionLabel, GroundedSpan};
