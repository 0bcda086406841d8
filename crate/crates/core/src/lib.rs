//! Hierarchy-aware, channel-adaptive semantic communication for fusing a
//! low-resolution hyperspectral cube with a high-resolution RGB image.
//!
//! The transmitter extracts spectral, spatial and fused features, folds them
//! into a single feature map with attention-derived cumulative masks, sends it
//! over a simulated noisy channel, and the receiver reconstructs the
//! high-resolution cube.
//!
//! All math is generic over [`Scalar`] (`f32` for training, `f64` for
//! gradient checks); the aliases below name the common instantiations.

pub mod channel;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod variant;

pub use error::{Error, Result};
pub use numerics::Scalar;
pub use variant::Variant;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type ParamSet32 = numerics::ParamSet<f32>;
pub type ParamSet64 = numerics::ParamSet<f64>;
pub type HsiCube32 = data::HsiCube<f32>;
pub type Model32 = harness::Model<f32>;
pub type Model64 = harness::Model<f64>;
