//! Manifests, folds, batch assembly and synthetic datasets.

mod batch;
mod manifest;
mod synth;

pub use batch::{make_batch, sample_crop_length, Batch, Sample, Targets, MIN_FRAMES};
pub use manifest::{read_classes, write_manifest, Manifest, ManifestEntry, Task};
pub use synth::{synth_clips, synth_dataset, Generator, SynthClip, SynthSpec};
