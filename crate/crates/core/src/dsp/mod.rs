//! Audio ingestion and the spectrogram frontend.

mod standardize;
mod stft;
mod wav;

pub use standardize::{
    fit_standardizer, Features, MomentAccumulator, Standardizer, STD_FLOOR, VARIANCE_POPULATION,
};
pub use stft::{
    decode_feature_cache, encode_feature_cache, hann_periodic, read_feature_cache,
    stft_magnitude, stft_with_params, write_feature_cache, Spectrogram, StftParams,
    DEFAULT_HOP_MS, DEFAULT_WINDOW_MS,
};
pub use wav::{encode_wav, parse_wav, read_wav, write_wav, AudioClip};
