//! Input embeddings and the stacked intra-/inter-modality transformer.

mod blocks;
mod config;
mod embed;
mod layers;

pub use blocks::{InterBlock, InterOutput, IntraBlock, IntraOutput};
pub use config::{ModelConfig, TaskSizes};
pub use embed::{ObjectEmbedding, ObjectInput, TokenSequence, WordEmbedding};
pub use layers::{AttentionOutput, FeedForward, LayerNorm, Linear, MultiHeadAttention};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Tensor, Var};

pub const CLS_ID: usize = 0;
pub const MASK_ID: usize = 1;
pub const PAD_ID: usize = 2;

/// Which attention a recorded map belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceKind {
    LangSelf,
    VisionSelf,
    /// Inter-modality: word queries over object keys.
    WordsFromObjects,
    /// Inter-modality: object queries over word keys.
    ObjectsFromWords,
    CrossLangSelf,
    CrossVisionSelf,
}

#[derive(Debug, Clone, Copy)]
pub struct TraceRef {
    pub kind: TraceKind,
    pub layer: usize,
    pub var: Var,
}

/// Per-head attention maps of one layer, each [queries × keys].
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub kind: TraceKind,
    pub layer: usize,
    pub heads: Vec<Tensor>,
}

impl AttentionTrace {
    /// Element-wise sum over heads.
    pub fn summed(&self) -> Tensor {
        let mut acc = self.heads[0].clone();
        for h in &self.heads[1..] {
            acc.data_mut()
                .iter_mut()
                .zip(h.data())
                .for_each(|(a, b)| *a += b);
        }
        acc
    }
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// O′, [objects × d].
    pub objects: Var,
    /// S′, [tokens × d].
    pub words: Var,
    pub traces: Vec<TraceRef>,
}

impl EncoderOutput {
    pub fn trace(&self, g: &Graph, kind: TraceKind, layer: usize) -> Option<AttentionTrace> {
        let r = self
            .traces
            .iter()
            .find(|t| t.kind == kind && t.layer == layer)?;
        let maps = g.attention_maps(r.var)?;
        let (rows, cols) = match kind {
            TraceKind::LangSelf | TraceKind::CrossLangSelf => {
                (g.value(self.words).rows(), g.value(self.words).rows())
            }
            TraceKind::VisionSelf | TraceKind::CrossVisionSelf => {
                (g.value(self.objects).rows(), g.value(self.objects).rows())
            }
            TraceKind::WordsFromObjects => {
                (g.value(self.words).rows(), g.value(self.objects).rows())
            }
            TraceKind::ObjectsFromWords => {
                (g.value(self.objects).rows(), g.value(self.words).rows())
            }
        };
        let heads = maps
            .iter()
            .map(|m| Tensor::matrix(rows, cols, m.clone()))
            .collect::<Result<_>>()
            .ok()?;
        Some(AttentionTrace { kind, layer, heads })
    }

    pub fn all_traces(&self, g: &Graph) -> Vec<AttentionTrace> {
        self.traces
            .iter()
            .filter_map(|r| self.trace(g, r.kind, r.layer))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Encoder {
    pub config: ModelConfig,
    pub objects: ObjectEmbedding,
    pub words: WordEmbedding,
    pub lang_layers: Vec<IntraBlock>,
    pub vision_layers: Vec<IntraBlock>,
    pub cross_layers: Vec<InterBlock>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (d, h, std) = (config.d_model, config.heads, config.init_std);
        let hidden = d * config.ffn_mult;
        let objects = ObjectEmbedding::new(store, config.feature_dim, d, std, rng)?;
        let words = WordEmbedding::new(store, config.vocab_size, config.max_tokens, d, std, rng)?;
        let lang_layers = (0..config.lang_layers)
            .map(|i| IntraBlock::new(store, &format!("encoder.lang.{i}"), d, h, hidden, std, rng))
            .collect::<Result<_>>()?;
        let vision_layers = (0..config.vision_layers)
            .map(|i| {
                IntraBlock::new(
                    store,
                    &format!("encoder.vision.{i}"),
                    d,
                    h,
                    hidden,
                    std,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let cross_layers = (0..config.cross_layers)
            .map(|i| InterBlock::new(store, &format!("encoder.cross.{i}"), d, h, hidden, std, rng))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config: config.clone(),
            objects,
            words,
            lang_layers,
            vision_layers,
            cross_layers,
        })
    }

    pub fn embed_objects(&self, g: &mut Graph, objects: &[ObjectInput]) -> Result<Var> {
        self.objects.forward(g, objects)
    }

    pub fn embed_words(&self, g: &mut Graph, tokens: &TokenSequence) -> Result<Var> {
        self.words.forward(g, tokens)
    }

    /// Language intra layers and vision intra layers, then the inter layers.
    pub fn encode(
        &self,
        g: &mut Graph,
        objects: &[ObjectInput],
        tokens: &TokenSequence,
    ) -> Result<EncoderOutput> {
        if objects.len() != self.config.objects {
            return Err(Error::shape(
                "encode",
                format!(
                    "{} objects, model expects {}",
                    objects.len(),
                    self.config.objects
                ),
            ));
        }
        if tokens.len() != self.config.max_tokens {
            return Err(Error::shape(
                "encode",
                format!(
                    "{} tokens, model expects {}",
                    tokens.len(),
                    self.config.max_tokens
                ),
            ));
        }
        let object_mask = vec![true; objects.len()];
        let word_mask = tokens.valid();
        let mut traces = Vec::new();

        let mut s = self.embed_words(g, tokens)?;
        for (i, layer) in self.lang_layers.iter().enumerate() {
            let out = layer.forward(g, s, word_mask)?;
            traces.push(TraceRef {
                kind: TraceKind::LangSelf,
                layer: i,
                var: out.maps,
            });
            s = out.output;
        }
        let mut o = self.embed_objects(g, objects)?;
        for (i, layer) in self.vision_layers.iter().enumerate() {
            let out = layer.forward(g, o, &object_mask)?;
            traces.push(TraceRef {
                kind: TraceKind::VisionSelf,
                layer: i,
                var: out.maps,
            });
            o = out.output;
        }
        for (i, layer) in self.cross_layers.iter().enumerate() {
            let out = layer.forward(g, s, o, word_mask, &object_mask)?;
            traces.extend([
                TraceRef {
                    kind: TraceKind::WordsFromObjects,
                    layer: i,
                    var: out.words_from_objects,
                },
                TraceRef {
                    kind: TraceKind::ObjectsFromWords,
                    layer: i,
                    var: out.objects_from_words,
                },
                TraceRef {
                    kind: TraceKind::CrossLangSelf,
                    layer: i,
                    var: out.lang_self,
                },
                TraceRef {
                    kind: TraceKind::CrossVisionSelf,
                    layer: i,
                    var: out.vision_self,
                },
            ]);
            s = out.words;
            o = out.objects;
        }
        Ok(EncoderOutput {
            objects: o,
            words: s,
            traces,
        })
    }
}
