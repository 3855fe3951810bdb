//! The full pretraining model: encoder, prediction heads, alignment decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::encoder::{Encoder, EncoderOutput, ModelConfig, ObjectInput, TokenSequence};
use crate::error::Result;
use crate::numeric::{Graph, ParamStore};
use crate::objectives::{AlignmentDecoder, PretrainHeads};

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub encoder: Encoder,
    pub heads: PretrainHeads,
    pub decoder: AlignmentDecoder,
}

impl Model {
    /// Registers every parameter in `store`, drawing initial values from `seed`.
    pub fn new(config: &ModelConfig, store: &mut ParamStore, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(config, store, &mut rng)?;
        let heads = PretrainHeads::new(config, store, &mut rng)?;
        let decoder = AlignmentDecoder::new(config, store, &mut rng)?;
        Ok(Model {
            config: config.clone(),
            encoder,
            heads,
            decoder,
        })
    }

    /// Fresh model together with its parameter store.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<(Model, ParamStore)> {
        let mut store = ParamStore::new();
        let model = Model::new(config, &mut store, seed)?;
        Ok((model, store))
    }

    pub fn encode(&self, g: &mut Graph, objects: &[ObjectInput], tokens: &TokenSequence) -> Result<EncoderOutput> {
        self.encoder.encode(g, objects, tokens)
    }
}
