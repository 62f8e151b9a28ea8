//! Dense tensors, the differentiation tape, initialization and Adam.

mod adam;
mod init;
mod rng;
mod tape;
mod tensor;
pub mod weights;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use init::{xavier_init, xavier_with};
pub use rng::SplitMix64;
pub use tape::{bce_term, sigmoid, BackwardFault, Gradients, Tape, Var, BCE_CLAMP};
pub use tensor::Tensor;
