use rand::Rng;

use super::layers::{add_and_norm, FeedForward, LayerNorm, MultiHeadAttention};
use crate::error::Result;
use crate::numeric::{Graph, ParamStore, Var};

/// Self-attention sublayer followed by a feed-forward sublayer, both post-norm.
#[derive(Debug, Clone)]
pub struct IntraBlock {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

#[derive(Debug, Clone, Copy)]
pub struct IntraOutput {
    pub output: Var,
    pub maps: Var,
}

impl IntraBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(IntraBlock {
            attention: MultiHeadAttention::new(
                store,
                &format!("{name}.attn"),
                dim,
                heads,
                std,
                rng,
            )?,
            attention_norm: LayerNorm::new(store, &format!("{name}.attn_norm"), dim)?,
            ffn: FeedForward::new(store, &format!("{name}.ffn"), dim, ffn_hidden, std, rng)?,
            ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), dim)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var, mask: &[bool]) -> Result<IntraOutput> {
        let attn = self.attention.forward(g, x, x, x, mask)?;
        let x1 = add_and_norm(g, x, attn.output, &self.attention_norm)?;
        let f = self.ffn.forward(g, x1)?;
        let output = add_and_norm(g, x1, f, &self.ffn_norm)?;
        Ok(IntraOutput {
            output,
            maps: attn.maps,
        })
    }
}

/// Cross-attention with keys/values taken from the other modality, then a
/// per-modality [`IntraBlock`]. Both cross steps read the block's inputs.
#[derive(Debug, Clone)]
pub struct InterBlock {
    /// Words attend to objects.
    pub lang_cross: MultiHeadAttention,
    pub lang_cross_norm: LayerNorm,
    /// Objects attend to words.
    pub vision_cross: MultiHeadAttention,
    pub vision_cross_norm: LayerNorm,
    pub lang_self: IntraBlock,
    pub vision_self: IntraBlock,
}

#[derive(Debug, Clone, Copy)]
pub struct InterOutput {
    pub words: Var,
    pub objects: Var,
    pub words_from_objects: Var,
    pub objects_from_words: Var,
    pub lang_self: Var,
    pub vision_self: Var,
}

impl InterBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        ffn_hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(InterBlock {
            lang_cross: MultiHeadAttention::new(
                store,
                &format!("{name}.lang_cross"),
                dim,
                heads,
                std,
                rng,
            )?,
            lang_cross_norm: LayerNorm::new(store, &format!("{name}.lang_cross_norm"), dim)?,
            vision_cross: MultiHeadAttention::new(
                store,
                &format!("{name}.vision_cross"),
                dim,
                heads,
                std,
                rng,
            )?,
            vision_cross_norm: LayerNorm::new(store, &format!("{name}.vision_cross_norm"), dim)?,
            lang_self: IntraBlock::new(
                store,
                &format!("{name}.lang_self"),
                dim,
                heads,
                ffn_hidden,
                std,
                rng,
            )?,
            vision_self: IntraBlock::new(
                store,
                &format!("{name}.vision_self"),
                dim,
                heads,
                ffn_hidden,
                std,
                rng,
            )?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        words: Var,
        objects: Var,
        word_mask: &[bool],
        object_mask: &[bool],
    ) -> Result<InterOutput> {
        let s_cross = self
            .lang_cross
            .forward(g, words, objects, objects, object_mask)?;
        let o_cross = self
            .vision_cross
            .forward(g, objects, words, words, word_mask)?;
        let s1 = add_and_norm(g, words, s_cross.output, &self.lang_cross_norm)?;
        let o1 = add_and_norm(g, objects, o_cross.output, &self.vision_cross_norm)?;
        let s2 = self.lang_self.forward(g, s1, word_mask)?;
        let o2 = self.vision_self.forward(g, o1, object_mask)?;
        Ok(InterOutput {
            words: s2.output,
            objects: o2.output,
            words_from_objects: s_cross.maps,
            objects_from_words: o_cross.maps,
            lang_self: s2.maps,
            vision_self: o2.maps,
        })
    }
}
