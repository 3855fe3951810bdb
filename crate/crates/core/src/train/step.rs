use rand::Rng;

use super::RunConfig;
use crate::error::Result;
use crate::model::Model;
use crate::numeric::{Graph, Var};
use crate::objectives::{
    alignment_loss, apply_masking, cls_embedding, draw_corruption, masking_losses, matching_loss,
    pair_comparison_loss, total_loss, vqa_loss, LossBundle, LossKind, TermGate,
};
use crate::targets::EmbeddingTable;
use crate::world::{detection_classes, object_inputs, Detection, UtteranceKind, UtteranceRecord, Vocabulary};

/// Detections of every train scene, for swapping in a mismatched image.
#[derive(Debug, Clone, Default)]
pub struct ScenePool {
    scenes: Vec<(usize, Vec<Detection>)>,
}

impl ScenePool {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a UtteranceRecord>) -> Self {
        let mut scenes: Vec<(usize, Vec<Detection>)> = Vec::new();
        for r in records {
            for (id, dets) in r.scene_ids.iter().zip(&r.detections) {
                scenes.push((*id, dets.clone()));
            }
        }
        scenes.sort_by_key(|(id, _)| *id);
        scenes.dedup_by_key(|(id, _)| *id);
        ScenePool { scenes }
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    /// Uniformly drawn scene other than `exclude`; `None` if there is none.
    pub fn draw_other<R: Rng + ?Sized>(&self, exclude: usize, rng: &mut R) -> Option<&[Detection]> {
        if self.scenes.iter().all(|(id, _)| *id == exclude) {
            return None;
        }
        loop {
            let (id, dets) = &self.scenes[rng.gen_range(0..self.scenes.len())];
            if *id != exclude {
                return Some(dets);
            }
        }
    }

    /// Deterministic pick: the `offset`-th other scene after `exclude`, cyclically.
    pub fn nth_other(&self, exclude: usize, offset: usize) -> Option<&[Detection]> {
        let others: Vec<&(usize, Vec<Detection>)> = self.scenes.iter().filter(|(id, _)| *id != exclude).collect();
        if others.is_empty() {
            return None;
        }
        let start = others.iter().position(|(id, _)| *id > exclude).unwrap_or(0);
        Some(&others[(start + offset) % others.len()].1)
    }
}

/// Shared inputs for building one example's loss.
pub struct StepContext<'a> {
    pub model: &'a Model,
    pub vocab: &'a Vocabulary,
    pub table: &'a EmbeddingTable,
    pub pool: &'a ScenePool,
    pub config: &'a RunConfig,
    pub epoch: usize,
}

/// Loss graph for one example plus what happened while building it.
pub struct ExampleLoss {
    pub total: Var,
    pub bundle: LossBundle,
    pub corrupted: bool,
}

/// Corrupts (w.p. `p_corrupt`), masks, encodes, and combines every
/// applicable loss term for `record`.
pub fn example_loss<R: Rng + ?Sized>(
    g: &mut Graph,
    ctx: &StepContext<'_>,
    record: &UtteranceRecord,
    rng: &mut R,
) -> Result<ExampleLoss> {
    let model = ctx.model;
    let config = ctx.config;
    let mut detections: &[Detection] = &record.detections[0];
    let mut corrupted = !record.matched;
    if draw_corruption(config.p_corrupt, rng) {
        if let Some(other) = ctx.pool.draw_other(record.scene_ids[0], rng) {
            detections = other;
            corrupted = true;
        }
    }
    let tokens = record.tokens(model.config.max_tokens)?;
    let objects = object_inputs(detections);
    let labels = detection_classes(detections);
    let (tokens, masked_objects, plan) = apply_masking(&tokens, &objects, &labels, config.p_mask, rng);
    let out = model.encode(g, &masked_objects, &tokens)?;

    let gate = TermGate {
        is_match: !corrupted,
        vqa_enabled: ctx.epoch >= config.vqa_start(),
        align_enabled: config.align,
    };
    let mut terms: Vec<(LossKind, Var)> = Vec::new();
    let masking = masking_losses(g, &out, &plan, &model.heads)?;
    for (kind, v) in [
        (LossKind::LangMask, masking.lang_mask),
        (LossKind::VisClass, masking.vis_class),
        (LossKind::VisAttr, masking.vis_attr),
        (LossKind::VisFeat, masking.vis_feat),
    ] {
        if let Some(v) = v {
            terms.push((kind, v));
        }
    }
    terms.push((LossKind::Match, matching_loss(g, &out, !corrupted, &model.heads)?));
    if let (Some(answer), true) = (record.answer, gate.allows(LossKind::Vqa)) {
        terms.push((LossKind::Vqa, vqa_loss(g, &out, answer, &model.heads)?));
    }
    if gate.allows(LossKind::Align) && record.is_annotated() {
        let target = record.alignment_target(ctx.vocab, ctx.table, model.config.max_tokens)?;
        if target.has_valid_rows() {
            let pred = model.decoder.forward(g, &out, config.top_k)?;
            if let Some(v) = alignment_loss(g, &pred, &target)? {
                terms.push((LossKind::Align, v));
            }
        }
    }
    if let (UtteranceKind::PairStatement, Some(label), false) = (record.kind, record.pair_label, corrupted) {
        let second = model.encode(g, &object_inputs(&record.detections[1]), &tokens)?;
        let cls_1 = cls_embedding(g, &out)?;
        let cls_2 = cls_embedding(g, &second)?;
        terms.push((LossKind::Pair, pair_comparison_loss(g, cls_1, cls_2, label, &model.heads)?));
    }
    let (total, bundle) = total_loss(g, &terms, &config.loss_weights, gate)?;
    Ok(ExampleLoss {
        total,
        bundle,
        corrupted,
    })
}
