use rand::Rng;

use crate::error::Result;
use crate::numeric::{Graph, ParamId, ParamStore, Var};

/// Affine map x·W + b with W stored as [in × out].
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.add_normal(format!("{name}.weight"), vec![in_dim, out_dim], std, rng)?,
            bias: store.add_constant(format!("{name}.bias"), vec![out_dim], 0.0)?,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.weight), g.param(self.bias));
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.add_constant(format!("{name}.gain"), vec![dim], 1.0)?,
            bias: store.add_constant(format!("{name}.bias"), vec![dim], 0.0)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let (gain, bias) = (g.param(self.gain), g.param(self.bias));
        g.layer_norm(x, gain, bias)
    }
}

/// linear(d → hidden), ReLU, linear(hidden → d).
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        hidden: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(FeedForward {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, std, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, std, rng)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.up.forward(g, x)?;
        let h = g.relu(h)?;
        self.down.forward(g, h)
    }
}

/// Multi-head attention with separate query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Output of [`MultiHeadAttention::forward`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionOutput {
    pub output: Var,
    /// Node holding the per-head maps (see [`Graph::attention_maps`]).
    pub maps: Var,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(MultiHeadAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, std, rng)?,
            key: Linear::new(store, &format!("{name}.key"), dim, dim, std, rng)?,
            value: Linear::new(store, &format!("{name}.value"), dim, dim, std, rng)?,
            output: Linear::new(store, &format!("{name}.output"), dim, dim, std, rng)?,
            heads,
        })
    }

    /// Queries from `queries`, keys from `keys`, values from `values`;
    /// `key_mask[j] == false` hides key j.
    pub fn forward(
        &self,
        g: &mut Graph,
        queries: Var,
        keys: Var,
        values: Var,
        key_mask: &[bool],
    ) -> Result<AttentionOutput> {
        let q = self.query.forward(g, queries)?;
        let k = self.key.forward(g, keys)?;
        let v = self.value.forward(g, values)?;
        let maps = g.attention(q, k, v, self.heads, key_mask)?;
        let output = self.output.forward(g, maps)?;
        Ok(AttentionOutput { output, maps })
    }
}

/// layer_norm(x + dropout(sublayer))
pub(crate) fn add_and_norm(g: &mut Graph, x: Var, sublayer: Var, norm: &LayerNorm) -> Result<Var> {
    let sublayer = g.dropout(sublayer)?;
    let sum = g.add(x, sublayer)?;
    norm.forward(g, sum)
}
