//! Forward and backward passes for every layer of the network.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod mask;
mod pool;

use serde::{Deserialize, Serialize};

pub use activation::{relu_backward, relu_forward};
pub use batchnorm::{BatchNorm, BatchStats, BnCache, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{he_normal, FilterbankConv, TemporalConv};
pub use dense::Dense;
pub use mask::{conv_output_len, min_input_len, LengthMask};
pub use pool::{masked_global_mean_pool, masked_pool_backward};

/// Train mode uses batch statistics and updates running estimates; eval mode
/// uses the running estimates only.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}
