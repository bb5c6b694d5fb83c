//! Masked global pooling networks for variable-length audio classification
//! and tagging: spectrogram frontend, layers with hand-written gradients,
//! training loop, metrics and brute-force reference oracles.

mod binio;
pub mod data;
pub mod dsp;
pub mod error;
pub mod layers;
pub mod mask_reference;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objectives;
pub mod optimize;

pub use error::{Error, Result};
