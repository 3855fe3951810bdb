use rand::Rng;

use crate::encoder::{EncoderOutput, FeedForward, LayerNorm, ModelConfig};
use crate::error::{Error, Result};
use crate::numeric::{Graph, ParamStore, Tensor, Var};
use crate::targets::AlignmentTarget;

/// Number of objects kept per word before the softmax.
pub const DEFAULT_TOP_K: usize = 3;

/// Projects O′ and S′ into a joint space (feed-forward + residual + layer
/// norm, one projection per modality) and scores word/object pairs by a
/// scaled dot product.
#[derive(Debug, Clone)]
pub struct AlignmentDecoder {
    pub lang_proj: FeedForward,
    pub lang_norm: LayerNorm,
    pub vision_proj: FeedForward,
    pub vision_norm: LayerNorm,
    pub d_model: usize,
}

/// Sparse word × object distribution: each row keeps `min(k, objects)` entries.
#[derive(Debug, Clone, Copy)]
pub struct AlignmentPrediction {
    pub probs: Var,
    pub scores: Var,
    pub k: usize,
}

impl AlignmentPrediction {
    pub fn support<'g>(&self, g: &'g Graph) -> &'g [Vec<usize>] {
        g.top_k_support(self.probs)
            .expect("alignment probabilities come from top_k_softmax")
    }

    pub fn matrix<'g>(&self, g: &'g Graph) -> &'g Tensor {
        g.value(self.probs)
    }
}

impl AlignmentDecoder {
    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        store: &mut ParamStore,
        rng: &mut R,
    ) -> Result<Self> {
        let (d, std) = (config.d_model, config.init_std);
        Ok(AlignmentDecoder {
            lang_proj: FeedForward::new(store, "align.lang_proj", d, d, std, rng)?,
            lang_norm: LayerNorm::new(store, "align.lang_norm", d)?,
            vision_proj: FeedForward::new(store, "align.vision_proj", d, d, std, rng)?,
            vision_norm: LayerNorm::new(store, "align.vision_norm", d)?,
            d_model: d,
        })
    }

    /// Ŝ, Ô projections.
    pub fn project(&self, g: &mut Graph, out: &EncoderOutput) -> Result<(Var, Var)> {
        let s = self.lang_proj.forward(g, out.words)?;
        let s = g.add(out.words, s)?;
        let s = self.lang_norm.forward(g, s)?;
        let o = self.vision_proj.forward(g, out.objects)?;
        let o = g.add(out.objects, o)?;
        let o = self.vision_norm.forward(g, o)?;
        Ok((s, o))
    }

    /// Per word: softmax over its `k` best-scoring objects (k clamped to the
    /// object count), zeros elsewhere.
    pub fn forward(
        &self,
        g: &mut Graph,
        out: &EncoderOutput,
        k: usize,
    ) -> Result<AlignmentPrediction> {
        if k == 0 {
            return Err(Error::invalid("alignment_decoder", "k must be at least 1"));
        }
        let (s, o) = self.project(g, out)?;
        let raw = g.matmul_t(s, o)?;
        let scores = g.scale(raw, 1.0 / (self.d_model as f64).sqrt())?;
        let k = k.min(g.value(o).rows());
        let probs = g.top_k_softmax(scores, k)?;
        Ok(AlignmentPrediction { probs, scores, k })
    }
}

/// Mean KL(A*ᵢ ‖ Aᵢ) over valid target rows; `None` when no row is valid.
pub fn alignment_loss(
    g: &mut Graph,
    pred: &AlignmentPrediction,
    target: &AlignmentTarget,
) -> Result<Option<Var>> {
    let shape = g.value(pred.probs).shape().to_vec();
    if target.matrix.shape() != shape.as_slice() {
        return Err(Error::shape(
            "alignment_loss",
            format!(
                "target {:?} vs prediction {:?}",
                target.matrix.shape(),
                shape
            ),
        ));
    }
    if !target.has_valid_rows() {
        return Ok(None);
    }
    g.kl_rows(&target.matrix, pred.probs, &target.valid)
        .map(Some)
}
