use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{LayerNorm, Linear};
use super::{CLS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::targets::BBox;

/// One detected region: feature vector plus normalized box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectInput {
    pub features: Vec<f64>,
    pub bbox: BBox,
}

/// Token ids with [CLS] at position 0 and trailing padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    valid: Vec<bool>,
}

impl TokenSequence {
    /// `ids` must start with [CLS]; the sequence is padded to `max_len`.
    pub fn new(ids: &[usize], max_len: usize) -> Result<Self> {
        if ids.first() != Some(&CLS_ID) {
            return Err(Error::invalid("token_sequence", "position 0 must be [CLS]"));
        }
        if ids.len() > max_len {
            return Err(Error::invalid(
                "token_sequence",
                format!("{} tokens exceed the maximum of {max_len}", ids.len()),
            ));
        }
        if ids[1..].contains(&CLS_ID) || ids.contains(&PAD_ID) {
            return Err(Error::invalid(
                "token_sequence",
                "[CLS]/[PAD] may not appear inside a sentence",
            ));
        }
        let mut padded = ids.to_vec();
        padded.resize(max_len, PAD_ID);
        let valid = (0..max_len).map(|i| i < ids.len()).collect();
        Ok(TokenSequence { ids: padded, valid })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of real (non-padding) tokens, [CLS] included.
    pub fn real_len(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn with_id(&self, position: usize, id: usize) -> Self {
        let mut out = self.clone();
        out.ids[position] = id;
        out
    }
}

/// Object branch: features and 7-d box projected and layer-normed separately,
/// then averaged.
#[derive(Debug, Clone)]
pub struct ObjectEmbedding {
    pub feature_proj: Linear,
    pub feature_norm: LayerNorm,
    pub box_proj: Linear,
    pub box_norm: LayerNorm,
    pub feature_dim: usize,
}

impl ObjectEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        feature_dim: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(ObjectEmbedding {
            feature_proj: Linear::new(store, "embed.object.feature", feature_dim, dim, std, rng)?,
            feature_norm: LayerNorm::new(store, "embed.object.feature_norm", dim)?,
            box_proj: Linear::new(store, "embed.object.box", 7, dim, std, rng)?,
            box_norm: LayerNorm::new(store, "embed.object.box_norm", dim)?,
            feature_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, objects: &[ObjectInput]) -> Result<Var> {
        if objects.is_empty() {
            return Err(Error::invalid("embed_objects", "no objects"));
        }
        let mut features = Vec::with_capacity(objects.len() * self.feature_dim);
        let mut boxes = Vec::with_capacity(objects.len() * 7);
        for obj in objects {
            if obj.features.len() != self.feature_dim {
                return Err(Error::shape(
                    "embed_objects",
                    format!(
                        "feature width {} vs {}",
                        obj.features.len(),
                        self.feature_dim
                    ),
                ));
            }
            obj.bbox.validate()?;
            features.extend_from_slice(&obj.features);
            boxes.extend_from_slice(&obj.bbox.features7());
        }
        let n = objects.len();
        let f = g.input(Tensor::matrix(n, self.feature_dim, features)?)?;
        let b = g.input(Tensor::matrix(n, 7, boxes)?)?;
        let f = self.feature_proj.forward(g, f)?;
        let f = self.feature_norm.forward(g, f)?;
        let b = self.box_proj.forward(g, b)?;
        let b = self.box_norm.forward(g, b)?;
        let sum = g.add(f, b)?;
        g.scale(sum, 0.5)
    }
}

/// Word branch: learned token lookup plus learned position vector, layer-normed.
#[derive(Debug, Clone)]
pub struct WordEmbedding {
    pub tokens: ParamId,
    pub positions: ParamId,
    pub norm: LayerNorm,
    pub vocab_size: usize,
}

impl WordEmbedding {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        max_tokens: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(WordEmbedding {
            tokens: store.add_normal("embed.word.tokens", vec![vocab_size, dim], std, rng)?,
            positions: store.add_normal("embed.word.positions", vec![max_tokens, dim], std, rng)?,
            norm: LayerNorm::new(store, "embed.word.norm", dim)?,
            vocab_size,
        })
    }

    pub fn forward(&self, g: &mut Graph, tokens: &TokenSequence) -> Result<Var> {
        if let Some(&bad) = tokens.ids().iter().find(|&&id| id >= self.vocab_size) {
            return Err(Error::invalid(
                "embed_words",
                format!(
                    "token id {bad} out of range for vocabulary of {}",
                    self.vocab_size
                ),
            ));
        }
        let table = g.param(self.tokens);
        let looked_up = g.gather_rows(table, tokens.ids())?;
        let positions = g.param(self.positions);
        let index: Vec<usize> = (0..tokens.len()).collect();
        let pos = g.gather_rows(positions, &index)?;
        let sum = g.add(looked_up, pos)?;
        self.norm.forward(g, sum)
    }
}
