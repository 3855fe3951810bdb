use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ScenePool;
use crate::encoder::TraceKind;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numeric::functional::{binary_cross_entropy_with_logit, cross_entropy, kl_divergence};
use crate::numeric::{Graph, ParamStore};
use crate::objectives::{answer_logits, cls_embedding, matching_logit, pair_logit};
use crate::targets::EmbeddingTable;
use crate::world::{object_inputs, Split, UtteranceKind, UtteranceRecord, Vocabulary};

/// Evaluation on uncorrupted, unmasked pairs. Fields are `None` when the
/// split has nothing to measure them on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: Split,
    pub examples: usize,
    pub qa_accuracy: Option<f64>,
    /// Each record's own scene (positive) and one other scene (negative).
    pub matching_accuracy: Option<f64>,
    pub pair_accuracy: Option<f64>,
    /// Over annotated words with a valid target row.
    pub alignment_recall_at_1: Option<f64>,
    /// Mean head-averaged attention on the target's arg-max object.
    pub attention_mass: Option<f64>,
    pub mean_alignment_kl: Option<f64>,
    pub attention_layer: usize,
    pub losses: BTreeMap<String, f64>,
}

#[derive(Default)]
struct Tally {
    hits: usize,
    total: usize,
}

impl Tally {
    fn add(&mut self, hit: bool) {
        self.hits += usize::from(hit);
        self.total += 1;
    }

    fn rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.hits as f64 / self.total as f64)
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    count: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.count += 1;
    }

    fn value(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum / self.count as f64)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// What evaluation needs besides the records.
pub struct Evaluator<'a> {
    pub model: &'a Model,
    pub store: &'a ParamStore,
    pub vocab: &'a Vocabulary,
    pub table: &'a EmbeddingTable,
    pub top_k: usize,
    pub attention_layer: usize,
}

/// Scores every record of `split`.
pub fn evaluate(ev: &Evaluator<'_>, records: &[&UtteranceRecord], split: Split) -> Result<MetricsReport> {
    let Evaluator {
        model,
        store,
        vocab,
        table,
        top_k,
        attention_layer,
    } = *ev;
    let layers = model.config.cross_layers;
    if attention_layer >= layers {
        return Err(Error::invalid(
            "evaluate",
            format!("attention layer {attention_layer} outside 0..{layers}"),
        ));
    }
    let records: Vec<&UtteranceRecord> = records.iter().copied().filter(|r| r.split == split).collect();
    let pool = ScenePool::from_records(records.iter().copied());
    let heads = model.config.heads as f64;
    let (mut qa, mut matching, mut pair, mut recall) = (Tally::default(), Tally::default(), Tally::default(), Tally::default());
    let (mut mass, mut kl) = (Mean::default(), Mean::default());
    let (mut match_loss, mut vqa_loss, mut pair_loss) = (Mean::default(), Mean::default(), Mean::default());
    for record in &records {
        let mut g = Graph::new(store);
        let tokens = record.tokens(model.config.max_tokens)?;
        let out = model.encode(&mut g, &object_inputs(&record.detections[0]), &tokens)?;

        let logit = matching_logit(&mut g, &out, &model.heads)?;
        let z = g.value(logit).item();
        matching.add(z > 0.0);
        match_loss.add(binary_cross_entropy_with_logit(z, true));
        if let Some(negative) = pool.nth_other(record.scene_ids[0], record.id) {
            let neg = model.encode(&mut g, &object_inputs(negative), &tokens)?;
            let logit = matching_logit(&mut g, &neg, &model.heads)?;
            let z = g.value(logit).item();
            matching.add(z <= 0.0);
            match_loss.add(binary_cross_entropy_with_logit(z, false));
        }

        if let Some(answer) = record.answer {
            let logits = answer_logits(&mut g, &out, &model.heads)?;
            let row = g.value(logits).data().to_vec();
            qa.add(argmax(&row) == answer);
            vqa_loss.add(cross_entropy(&row, answer)?);
        }

        if let (UtteranceKind::PairStatement, Some(label)) = (record.kind, record.pair_label) {
            let second = model.encode(&mut g, &object_inputs(&record.detections[1]), &tokens)?;
            let (c1, c2) = (cls_embedding(&mut g, &out)?, cls_embedding(&mut g, &second)?);
            let logit = pair_logit(&mut g, c1, c2, &model.heads)?;
            let z = g.value(logit).item();
            pair.add((z > 0.0) == label);
            pair_loss.add(binary_cross_entropy_with_logit(z, label));
        }

        if record.is_annotated() {
            let target = record.alignment_target(vocab, table, model.config.max_tokens)?;
            if target.has_valid_rows() {
                let trace = out
                    .trace(&g, TraceKind::WordsFromObjects, attention_layer)
                    .ok_or_else(|| Error::invalid("evaluate", "missing cross-attention trace"))?;
                let summed = trace.summed();
                let pred = model.decoder.forward(&mut g, &out, top_k)?;
                let probs = pred.matrix(&g);
                let mut record_kl = Mean::default();
                for i in (0..target.rows()).filter(|&i| target.valid[i]) {
                    let best = target.argmax(i);
                    recall.add(argmax(summed.row(i)) == best);
                    mass.add(summed.row(i)[best] / heads);
                    record_kl.add(kl_divergence(target.row(i), probs.row(i))?);
                }
                if let Some(v) = record_kl.value() {
                    kl.add(v);
                }
            }
        }
    }
    let mut losses = BTreeMap::new();
    for (name, m) in [("match", &match_loss), ("vqa", &vqa_loss), ("pair", &pair_loss)] {
        if let Some(v) = m.value() {
            losses.insert(name.to_string(), v);
        }
    }
    Ok(MetricsReport {
        split,
        examples: records.len(),
        qa_accuracy: qa.rate(),
        matching_accuracy: matching.rate(),
        pair_accuracy: pair.rate(),
        alignment_recall_at_1: recall.rate(),
        attention_mass: mass.value(),
        mean_alignment_kl: kl.value(),
        attention_layer,
        losses,
    })
}
