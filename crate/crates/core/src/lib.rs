//! Mean velocity policies: one-step flow generation trained with the
//! mean-flow identity and an instantaneous-velocity boundary constraint,
//! embedded in an offline-to-online actor-critic loop.

pub mod autodiff;
mod error;
pub mod gradcheck;
pub mod meanflow;
pub mod nets;
pub mod rl;
mod rng;
mod tensor;
pub mod theory;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
