//! Teacher-student robustness laboratory.
//!
//! Small ReLU networks are trained against a frozen teacher that acts as the
//! labelling oracle. The crate provides the networks and their exact
//! gradients, adversarial-example generators, the training regimes that use
//! them, neuron specialization metrics, and numerical checks of projected
//! specialization on synthetic low-rank data.

pub mod error;
pub mod numerics;
pub mod network;
pub mod data;
pub mod attacks;
pub mod specialization;
pub mod training;
pub mod theory;
mod serde_clip;

pub use error::{Error, Result};
