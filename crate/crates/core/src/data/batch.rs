use crate::dsp::Features;
use crate::error::{Error, Result};
use crate::layers::LengthMask;
use crate::numerics::{Rng, Tensor};

/// Shortest clip that survives the default stack (15 -> 7 -> 3 -> 1).
pub const MIN_FRAMES: usize = 15;

/// A standardized clip and its class indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// One class index per sample.
    Single(Vec<usize>),
    /// `(b, K)` binary indicator matrix.
    Multi(Tensor<f32>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Single(v) => v.len(),
            Targets::Multi(t) => t.dim(0),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Zero-padded `(b, 1, h_max, bins)` input with its length mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub x: Tensor<f32>,
    pub mask: LengthMask,
    pub targets: Targets,
}

/// Uniform integer crop length in `[h_min, h_max]`.
pub fn sample_crop_length(rng: &mut Rng, h_min: usize, h_max: usize) -> usize {
    rng.int_inclusive(h_min, h_max.max(h_min))
}

/// Stacks samples into a batch. With `crop`, each sample is cut to a uniformly
/// placed window of `min(crop, frames)` frames drawn from `rng`.
pub fn make_batch(
    samples: &[&Sample],
    multi_label: bool,
    num_classes: usize,
    crop: Option<usize>,
    min_frames: usize,
    rng: &mut Rng,
) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::EmptyInput("cannot assemble an empty batch".into()))?;
    let bins = first.features.bins;

    let mut windows = Vec::with_capacity(samples.len());
    for (index, s) in samples.iter().enumerate() {
        let f = &s.features;
        if f.bins != bins {
            return Err(Error::Shape(format!("sample {index} has {} bins, expected {bins}", f.bins)));
        }
        let len = crop.map_or(f.frames, |c| c.min(f.frames));
        if len < min_frames {
            return Err(Error::SampleTooShort {
                index,
                frames: len,
                minimum: min_frames,
            });
        }
        let start = if len < f.frames { rng.int_inclusive(0, f.frames - len) } else { 0 };
        windows.push((start, len));
    }

    let h = windows.iter().map(|w| w.1).max().unwrap();
    let mut x = Tensor::zeros(&[samples.len(), 1, h, bins])?;
    for (i, (s, &(start, len))) in samples.iter().zip(&windows).enumerate() {
        let src = &s.features.data.data()[start * bins..(start + len) * bins];
        x.data_mut()[i * h * bins..i * h * bins + len * bins].copy_from_slice(src);
    }
    let mask = LengthMask::new(windows.iter().map(|w| w.1).collect())?;

    let targets = if multi_label {
        let mut y = Tensor::zeros(&[samples.len(), num_classes])?;
        for (i, s) in samples.iter().enumerate() {
            for &l in &s.labels {
                check_label(l, num_classes)?;
                y.data_mut()[i * num_classes + l] = 1.0;
            }
        }
        Targets::Multi(y)
    } else {
        let mut y = Vec::with_capacity(samples.len());
        for s in samples {
            match s.labels.as_slice() {
                [l] => {
                    check_label(*l, num_classes)?;
                    y.push(*l);
                }
                other => {
                    return Err(Error::Label(format!(
                        "single-label sample carries {} labels",
                        other.len()
                    )))
                }
            }
        }
        Targets::Single(y)
    };
    Ok(Batch { x, mask, targets })
}

fn check_label(l: usize, k: usize) -> Result<()> {
    if l >= k {
        return Err(Error::Label(format!("class index {l} is outside [0, {k})")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn sample(frames: usize, bins: usize, label: usize) -> Sample {
        let data = (0..frames * bins).map(|i| 1.0 + i as f32).collect();
        Sample {
            features: Features::from_tensor(Tensor::from_vec(&[frames, bins], data).unwrap()).unwrap(),
            labels: vec![label],
        }
    }

    #[test]
    fn equal_lengths_need_no_padding() {
        let (a, b) = (sample(266, 3, 0), sample(266, 3, 1));
        let batch = make_batch(&[&a, &b], false, 2, None, MIN_FRAMES, &mut Rng::new(0)).unwrap();
        assert_eq!(batch.x.shape(), &[2, 1, 266, 3]);
        assert_eq!(batch.mask.valid(), &[266, 266]);
        assert_eq!(batch.targets, Targets::Single(vec![0, 1]));
    }

    #[test]
    fn shorter_sample_is_zero_padded() {
        let (a, b) = (sample(100, 2, 0), sample(40, 2, 0));
        let batch = make_batch(&[&a, &b], false, 1, None, MIN_FRAMES, &mut Rng::new(0)).unwrap();
        assert_eq!(batch.mask.valid(), &[100, 40]);
        let second = &batch.x.data()[200..400];
        assert_eq!(&second[..80], b.features.data.data());
        assert!(second[80..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_short_is_an_error() {
        let a = sample(14, 2, 0);
        assert!(matches!(
            make_batch(&[&a], false, 1, None, MIN_FRAMES, &mut Rng::new(0)),
            Err(Error::SampleTooShort { index: 0, frames: 14, minimum: 15 })
        ));
    }

    #[test]
    fn multi_label_targets() {
        let mut a = sample(20, 2, 0);
        a.labels = vec![0, 2];
        let mut b = sample(20, 2, 0);
        b.labels = vec![];
        let batch = make_batch(&[&a, &b], true, 3, None, MIN_FRAMES, &mut Rng::new(0)).unwrap();
        match batch.targets {
            Targets::Multi(y) => assert_eq!(y.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
            _ => panic!("expected multi-label targets"),
        }
    }

    #[test]
    fn crop_mean_is_uniform() {
        let mut rng = Rng::new(4);
        let n = 100_000;
        let mean = (0..n).map(|_| sample_crop_length(&mut rng, 15, 100) as f64).sum::<f64>() / n as f64;
        assert!((mean - 57.5).abs() / 57.5 < 0.02, "{mean}");
        assert_eq!(sample_crop_length(&mut rng, 30, 30), 30);
    }

    proptest! {
        #[test]
        fn crops_stay_inside_the_clip(len in 15usize..300, crop in 15usize..300, seed in 0u64..1000) {
            let s = sample(len, 1, 0);
            let batch = make_batch(&[&s], false, 1, Some(crop), MIN_FRAMES, &mut Rng::new(seed)).unwrap();
            let got = batch.mask.valid()[0];
            prop_assert_eq!(got, crop.min(len));
            // values encode the source frame index, so the window is contiguous and in range
            let first = batch.x.data()[0] as usize - 1;
            prop_assert!(first + got <= len);
            for t in 0..got {
                prop_assert_eq!(batch.x.data()[t] as usize - 1, first + t);
            }
        }
    }
}
