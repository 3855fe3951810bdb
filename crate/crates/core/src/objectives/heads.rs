use rand::Rng;

use crate::encoder::{EncoderOutput, FeedForward, Linear, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Var};

use super::MaskingPlan;

/// Prediction heads on top of the encoder outputs.
#[derive(Debug, Clone)]
pub struct PretrainHeads {
    pub vocab: Linear,
    pub class: Linear,
    pub attribute: Linear,
    pub feature: Linear,
    pub matching: Linear,
    pub answer: FeedForward,
    pub pair: Linear,
    pub answer_count: usize,
}

impl PretrainHeads {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let (d, std) = (config.d_model, config.init_std);
        let answer = FeedForward {
            up: Linear::new(store, "heads.answer.hidden", d, d, std, rng)?,
            down: Linear::new(
                store,
                "heads.answer.logits",
                d,
                config.answer_count,
                std,
                rng,
            )?,
        };
        Ok(PretrainHeads {
            vocab: Linear::new(store, "heads.vocab", d, config.vocab_size, std, rng)?,
            class: Linear::new(store, "heads.class", d, config.class_count, std, rng)?,
            attribute: Linear::new(
                store,
                "heads.attribute",
                d,
                config.attribute_count,
                std,
                rng,
            )?,
            feature: Linear::new(store, "heads.feature", d, config.feature_dim, std, rng)?,
            matching: Linear::new(store, "heads.matching", d, 1, std, rng)?,
            answer,
            pair: Linear::new(store, "heads.pair", 2 * d, 1, std, rng)?,
            answer_count: config.answer_count,
        })
    }
}

/// The [CLS] row of S′ as a [1 × d] value.
pub fn cls_embedding(g: &mut Graph, out: &EncoderOutput) -> Result<Var> {
    g.gather_rows(out.words, &[0])
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MaskingLosses {
    pub lang_mask: Option<Var>,
    pub vis_class: Option<Var>,
    pub vis_attr: Option<Var>,
    pub vis_feat: Option<Var>,
}

/// Word reconstruction over the vocabulary, object class/attribute
/// classification, and feature regression. Terms with nothing masked are `None`.
pub fn masking_losses(
    g: &mut Graph,
    out: &EncoderOutput,
    plan: &MaskingPlan,
    heads: &PretrainHeads,
) -> Result<MaskingLosses> {
    let mut losses = MaskingLosses::default();
    if !plan.words.is_empty() {
        let positions: Vec<usize> = plan.words.iter().map(|w| w.position).collect();
        let labels: Vec<usize> = plan.words.iter().map(|w| w.original_id).collect();
        let rows = g.gather_rows(out.words, &positions)?;
        let logits = heads.vocab.forward(g, rows)?;
        losses.lang_mask = Some(g.cross_entropy(logits, &labels)?);
    }
    if !plan.objects.is_empty() {
        let indices: Vec<usize> = plan.objects.iter().map(|o| o.index).collect();
        let rows = g.gather_rows(out.objects, &indices)?;
        let classes: Vec<usize> = plan.objects.iter().map(|o| o.class).collect();
        let attributes: Vec<usize> = plan.objects.iter().map(|o| o.attribute).collect();
        let class_logits = heads.class.forward(g, rows)?;
        losses.vis_class = Some(g.cross_entropy(class_logits, &classes)?);
        let attr_logits = heads.attribute.forward(g, rows)?;
        losses.vis_attr = Some(g.cross_entropy(attr_logits, &attributes)?);
        let predicted = heads.feature.forward(g, rows)?;
        let target: Vec<f64> = plan
            .objects
            .iter()
            .flat_map(|o| o.features.iter().copied())
            .collect();
        losses.vis_feat = Some(g.mse(predicted, &target)?);
    }
    Ok(losses)
}

pub fn matching_logit(g: &mut Graph, out: &EncoderOutput, heads: &PretrainHeads) -> Result<Var> {
    let cls = cls_embedding(g, out)?;
    heads.matching.forward(g, cls)
}

/// Binary cross-entropy of the [CLS] matching head.
pub fn matching_loss(
    g: &mut Graph,
    out: &EncoderOutput,
    is_match: bool,
    heads: &PretrainHeads,
) -> Result<Var> {
    let logit = matching_logit(g, out, heads)?;
    g.binary_cross_entropy(logit, &[is_match])
}

pub fn answer_logits(g: &mut Graph, out: &EncoderOutput, heads: &PretrainHeads) -> Result<Var> {
    let cls = cls_embedding(g, out)?;
    heads.answer.forward(g, cls)
}

/// Cross-entropy of the [CLS] answer classifier.
pub fn vqa_loss(
    g: &mut Graph,
    out: &EncoderOutput,
    answer: usize,
    heads: &PretrainHeads,
) -> Result<Var> {
    if answer >= heads.answer_count {
        return Err(Error::invalid(
            "vqa_loss",
            format!("answer {answer} outside {} answers", heads.answer_count),
        ));
    }
    let logits = answer_logits(g, out, heads)?;
    g.cross_entropy(logits, &[answer])
}

/// Logit of the pair head over [cls_1 ; cls_2].
pub fn pair_logit(g: &mut Graph, cls_1: Var, cls_2: Var, heads: &PretrainHeads) -> Result<Var> {
    let joined = g.concat_cols(&[cls_1, cls_2])?;
    heads.pair.forward(g, joined)
}

/// Binary cross-entropy of the two-image comparison head.
pub fn pair_comparison_loss(
    g: &mut Graph,
    cls_1: Var,
    cls_2: Var,
    label: bool,
    heads: &PretrainHeads,
) -> Result<Var> {
    let logit = pair_logit(g, cls_1, cls_2, heads)?;
    g.binary_cross_entropy(logit, &[label])
}
