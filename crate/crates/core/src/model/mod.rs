//! The all-convolutional network, its parameter bookkeeping and checkpoints.

mod checkpoint;
mod network;

pub use checkpoint::{
    check_config, decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_for,
    save_checkpoint,
};
pub use network::{
    head_probabilities, ForwardPass, Head, LayerRow, Network, NetworkConfig, ParamKind, ParamRef,
    Trace,
};
