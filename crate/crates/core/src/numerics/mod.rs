//! Differentiable tensor operations, parameter storage and the optimizer.

mod adam;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState, L2Scope};
pub use params::{initialize, ParamRole, ParamStore};
pub use tape::{elu, sigmoid, weighted_bce, Gradients, NodeId, Tape, PROB_CLAMP};
pub use tensor::Tensor;
