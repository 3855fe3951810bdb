//! Dense tensors, reverse-mode differentiation, Adam, and gradient checking.

mod adam;
mod checkpoint;
pub mod functional;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{AdamState, LrSchedule};
pub use checkpoint::{Checkpoint, TensorRecord, CHECKPOINT_VERSION};
pub use functional::{cross_entropy, kl_divergence, layer_norm, softmax};
pub use gradcheck::{grad_check, relative_error, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{DropoutCtx, Gradients, Graph, Var};
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;
