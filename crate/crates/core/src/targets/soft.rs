use serde::{Deserialize, Serialize};

use super::{iou, semantic_score, BBox, EmbeddingTable};
use crate::error::{Error, Result};
use crate::numeric::Tensor;

/// Token range `[start, end)` of a sentence tied to a ground-truth box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundedSpan {
    pub start: usize,
    pub end: usize,
    pub bbox: BBox,
}

/// What the position and semantic criteria need to know about one detection.
#[derive(Debug, Clone, Copy)]
pub struct DetectionLabel<'a> {
    pub bbox: BBox,
    pub class_name: &'a str,
    pub attribute_name: &'a str,
}

/// Row-stochastic word × object target with a per-row validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentTarget {
    pub matrix: Tensor,
    pub valid: Vec<bool>,
}

impl AlignmentTarget {
    pub fn rows(&self) -> usize {
        self.valid.len()
    }

    pub fn has_valid_rows(&self) -> bool {
        self.valid.iter().any(|&v| v)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.matrix.row(i)
    }

    /// Arg-max object of a row, ties to the lowest index.
    pub fn argmax(&self, i: usize) -> usize {
        let row = self.row(i);
        let mut best = 0;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        best
    }
}

fn sum_normalized(scores: &[f64]) -> Option<Vec<f64>> {
    let total: f64 = scores.iter().sum();
    (total > 0.0).then(|| scores.iter().map(|s| s / total).collect())
}

/// Averages the sum-normalized position (IoU) and semantic criteria for every
/// annotated token. When one criterion is zero across all detections the row
/// is the other criterion alone; when both are, the row is marked invalid.
pub fn build_soft_targets(
    words: &[String],
    rows: usize,
    spans: &[GroundedSpan],
    detections: &[DetectionLabel<'_>],
    table: &EmbeddingTable,
) -> Result<AlignmentTarget> {
    let cols = detections.len();
    if cols == 0 {
        return Err(Error::invalid("build_soft_targets", "no detections"));
    }
    if words.len() > rows {
        return Err(Error::shape(
            "build_soft_targets",
            format!("{} words exceed {rows} rows", words.len()),
        ));
    }
    let mut matrix = vec![0.0; rows * cols];
    let mut valid = vec![false; rows];
    for span in spans {
        if span.start == 0 || span.start >= span.end || span.end > words.len() {
            return Err(Error::invalid(
                "build_soft_targets",
                format!(
                    "span [{}, {}) outside words 1..{}",
                    span.start,
                    span.end,
                    words.len()
                ),
            ));
        }
        span.bbox.validate()?;
        let mut position = Vec::with_capacity(cols);
        let mut semantic = Vec::with_capacity(cols);
        let span_len = (span.end - span.start) as f64;
        for det in detections {
            position.push(iou(&span.bbox, &det.bbox)?);
            let mut s = 0.0;
            for word in &words[span.start..span.end] {
                s += semantic_score(word, det.class_name, det.attribute_name, table)?;
            }
            semantic.push(s / span_len);
        }
        let row = match (sum_normalized(&position), sum_normalized(&semantic)) {
            (Some(p), Some(s)) => Some(p.iter().zip(&s).map(|(a, b)| 0.5 * (a + b)).collect()),
            (Some(p), None) => Some(p),
            (None, Some(s)) => Some(s),
            (None, None) => None,
        };
        for i in span.start..span.end {
            let dst = &mut matrix[i * cols..(i + 1) * cols];
            match &row {
                Some(r) => {
                    dst.copy_from_slice(r);
                    valid[i] = true;
                }
                None => {
                    dst.iter_mut().for_each(|v| *v = 0.0);
                    valid[i] = false;
                }
            }
        }
    }
    Ok(AlignmentTarget {
        matrix: Tensor::matrix(rows, cols, matrix)?,
        valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> EmbeddingTable {
        EmbeddingTable::new(vec![
            ("[CLS]".into(), vec![0.0, 0.0, 0.0, 1.0]),
            ("square".into(), vec![1.0, 0.0, 0.0, 0.0]),
            ("circle".into(), vec![0.0, 1.0, 0.0, 0.0]),
            ("red".into(), vec![0.0, 0.0, 1.0, 0.0]),
            ("blue".into(), vec![0.0, 0.0, 0.0, 1.0]),
        ])
        .unwrap()
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_detection_gets_full_mass() {
        let t = table();
        let b = BBox::new(0.1, 0.1, 0.4, 0.4).unwrap();
        let dets = [DetectionLabel {
            bbox: BBox::new(0.12, 0.1, 0.42, 0.4).unwrap(),
            class_name: "square",
            attribute_name: "red",
        }];
        let spans = [GroundedSpan {
            start: 1,
            end: 2,
            bbox: b,
        }];
        let target =
            build_soft_targets(&words(&["[CLS]", "square"]), 3, &spans, &dets, &t).unwrap();
        assert_eq!(target.row(1), &[1.0]);
        assert_eq!(target.valid, vec![false, true, false]);
        assert_eq!(target.row(0), &[0.0]);
    }

    #[test]
    fn position_and_semantics_split_evenly() {
        // Detection 0: perfect IoU, wrong class (semantic 0).
        // Detection 1: no overlap, right class (semantic 0.75).
        let t = table();
        let pointer = BBox::new(0.0, 0.0, 0.3, 0.3).unwrap();
        let dets = [
            DetectionLabel {
                bbox: pointer,
                class_name: "circle",
                attribute_name: "blue",
            },
            DetectionLabel {
                bbox: BBox::new(0.6, 0.6, 0.9, 0.9).unwrap(),
                class_name: "square",
                attribute_name: "blue",
            },
        ];
        let spans = [GroundedSpan {
            start: 1,
            end: 2,
            bbox: pointer,
        }];
        let target =
            build_soft_targets(&words(&["[CLS]", "square"]), 2, &spans, &dets, &t).unwrap();
        assert_eq!(target.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn undetected_and_unrelated_row_is_invalid() {
        let t = table();
        let pointer = BBox::new(0.0, 0.0, 0.2, 0.2).unwrap();
        let dets = [DetectionLabel {
            bbox: BBox::new(0.5, 0.5, 0.9, 0.9).unwrap(),
            class_name: "circle",
            attribute_name: "blue",
        }];
        let spans = [GroundedSpan {
            start: 1,
            end: 3,
            bbox: pointer,
        }];
        let target =
            build_soft_targets(&words(&["[CLS]", "red", "square"]), 3, &spans, &dets, &t).unwrap();
        assert!(!target.has_valid_rows());
        assert!(target.matrix.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn span_tokens_share_a_row() {
        let t = table();
        let pointer = BBox::new(0.0, 0.0, 0.2, 0.2).unwrap();
        let dets = [
            DetectionLabel {
                bbox: BBox::new(0.0, 0.0, 0.2, 0.25).unwrap(),
                class_name: "square",
                attribute_name: "red",
            },
            DetectionLabel {
                bbox: BBox::new(0.5, 0.5, 0.9, 0.9).unwrap(),
                class_name: "square",
                attribute_name: "blue",
            },
        ];
        let spans = [GroundedSpan {
            start: 1,
            end: 3,
            bbox: pointer,
        }];
        let target =
            build_soft_targets(&words(&["[CLS]", "red", "square"]), 4, &spans, &dets, &t).unwrap();
        assert_eq!(target.row(1), target.row(2));
        let s: f64 = target.row(1).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(target.argmax(1), 0);
    }

    #[test]
    fn malformed_span_is_rejected() {
        let t = table();
        let b = BBox::new(0.0, 0.0, 0.2, 0.2).unwrap();
        let dets = [DetectionLabel {
            bbox: b,
            class_name: "square",
            attribute_name: "red",
        }];
        let spans = [GroundedSpan {
            start: 0,
            end: 1,
            bbox: b,
        }];
        assert!(build_soft_targets(&words(&["[CLS]", "x"]), 2, &spans, &dets, &t).is_err());
    }
}
