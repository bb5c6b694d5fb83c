use crate::error::{Error, Result};

/// Per-sample count of valid (non-padded) time steps at one layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LengthMask {
    valid: Vec<usize>,
}

impl LengthMask {
    pub fn new(valid: Vec<usize>) -> Result<Self> {
        if valid.is_empty() {
            return Err(Error::EmptyInput("length mask has no samples".into()));
        }
        if let Some(i) = valid.iter().position(|&v| v == 0) {
            return Err(Error::EmptyPool(i));
        }
        Ok(Self { valid })
    }

    /// Every sample valid over the whole padded height.
    pub fn full(batch: usize, height: usize) -> Result<Self> {
        Self::new(vec![height; batch])
    }

    pub fn valid(&self) -> &[usize] {
        &self.valid
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    pub fn max(&self) -> usize {
        self.valid.iter().copied().max().unwrap_or(0)
    }

    /// Checks `valid[i] <= height` for a padded tensor of that height.
    pub fn check_height(&self, height: usize) -> Result<()> {
        match self.valid.iter().position(|&v| v > height) {
            Some(i) => Err(Error::Shape(format!(
                "sample {i} claims {} valid frames but the tensor has {height}",
                self.valid[i]
            ))),
            None => Ok(()),
        }
    }

    /// Valid lengths after a valid (unpadded) convolution: only output frames
    /// whose whole receptive field lies in the valid input are counted.
    pub fn propagate(&self, kernel: usize, stride: usize) -> Result<Self> {
        let valid = self
            .valid
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v < kernel {
                    Err(Error::SampleTooShort {
                        index: i,
                        frames: v,
                        minimum: kernel,
                    })
                } else {
                    Ok(conv_output_len(v, kernel, stride))
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { valid })
    }
}

/// `floor((len - kernel) / stride) + 1`; callers guarantee `len >= kernel`.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

/// Smallest input length that survives `layers` valid convolutions with at
/// least one output frame.
pub fn min_input_len(layers: usize, kernel: usize, stride: usize) -> usize {
    (0..layers).fold(1, |len, _| (len - 1) * stride + kernel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn propagation_examples() {
        let m = LengthMask::new(vec![30, 3]).unwrap();
        assert_eq!(m.propagate(3, 2).unwrap().valid(), &[14, 1]);
    }

    #[test]
    fn fifteen_survives_three_layers() {
        let mut m = LengthMask::new(vec![15]).unwrap();
        let mut seen = vec![];
        for _ in 0..3 {
            m = m.propagate(3, 2).unwrap();
            seen.push(m.valid()[0]);
        }
        assert_eq!(seen, vec![7, 3, 1]);
        assert_eq!(min_input_len(3, 3, 2), 15);
        assert_eq!(min_input_len(1, 3, 2), 3);
        assert_eq!(min_input_len(0, 3, 2), 1);
    }

    #[test]
    fn short_sample_errors() {
        let m = LengthMask::new(vec![5, 2]).unwrap();
        assert!(matches!(
            m.propagate(3, 2),
            Err(Error::SampleTooShort { index: 1, frames: 2, minimum: 3 })
        ));
    }

    #[test]
    fn zero_length_rejected() {
        assert!(matches!(LengthMask::new(vec![4, 0]), Err(Error::EmptyPool(1))));
    }

    proptest! {
        #[test]
        fn monotone_in_valid_length(a in 3usize..500, b in 3usize..500) {
            let (lo, hi) = (a.min(b), a.max(b));
            let m = LengthMask::new(vec![lo, hi]).unwrap().propagate(3, 2).unwrap();
            prop_assert!(m.valid()[0] <= m.valid()[1]);
        }

        #[test]
        fn counted_frames_have_valid_receptive_fields(v in 3usize..500) {
            let out = LengthMask::new(vec![v]).unwrap().propagate(3, 2).unwrap().valid()[0];
            // last counted output reads inputs up to 2*(out-1)+2
            prop_assert!(2 * (out - 1) + 2 < v);
            // and one more output would not fit
            prop_assert!(2 * out + 2 >= v);
        }
    }
}
