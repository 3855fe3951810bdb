//! Vision-language transformer encoder with BERT-style pretraining objectives
//! and a weakly supervised object-word alignment loss, plus a synthetic
//! grounded-scene world to train and probe it at desk scale.

pub mod cli;
pub mod encoder;
pub mod error;
pub mod model;
pub mod numeric;
pub mod objectives;
pub mod targets;
pub mod train;
pub mod world;

pub use error::{Error, Result};
pub use model::Model;
