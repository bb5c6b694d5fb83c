use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

use super::LengthMask;

fn geometry<T: Copy>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [b, c, h, 1] => Ok((b, c, h)),
        _ => Err(Error::Shape(format!(
            "masked pooling expects (b, c, h, 1), got {:?}",
            x.shape()
        ))),
    }
}

/// Mean over the first `valid[i]` frames of each sample; padded frames are
/// never read. Output `(b, c)`.
pub fn masked_global_mean_pool<T: Real>(x: &Tensor<T>, mask: &LengthMask) -> Result<Tensor<T>> {
    let (b, c, h) = geometry(x)?;
    if mask.len() != b {
        return Err(Error::Shape(format!("mask has {} samples, batch has {b}", mask.len())));
    }
    mask.check_height(h)?;
    let mut out = Tensor::zeros(&[b, c])?;
    for (s, &valid) in mask.valid().iter().enumerate() {
        if valid == 0 {
            return Err(Error::EmptyPool(s));
        }
        let n = T::from_usize(valid).unwrap();
        for ch in 0..c {
            let base = (s * c + ch) * h;
            let sum: T = x.data()[base..base + valid].iter().copied().sum();
            out.data_mut()[s * c + ch] = sum / n;
        }
    }
    Ok(out)
}

/// Spreads `1 / valid[i]` of each pooled gradient over the valid frames and
/// exactly zero over padded frames.
pub fn masked_pool_backward<T: Real>(grad_out: &Tensor<T>, mask: &LengthMask, height: usize) -> Result<Tensor<T>> {
    let (b, c) = match *grad_out.shape() {
        [b, c] => (b, c),
        _ => {
            return Err(Error::Shape(format!(
                "pooled gradient must be (b, c), got {:?}",
                grad_out.shape()
            )))
        }
    };
    if mask.len() != b {
        return Err(Error::Shape(format!("mask has {} samples, batch has {b}", mask.len())));
    }
    mask.check_height(height)?;
    let mut gx = Tensor::zeros(&[b, c, height, 1])?;
    for (s, &valid) in mask.valid().iter().enumerate() {
        let n = T::from_usize(valid).unwrap();
        for ch in 0..c {
            let g = grad_out.data()[s * c + ch] / n;
            let base = (s * c + ch) * height;
            gx.data_mut()[base..base + valid].fill(g);
        }
    }
    Ok(gx)
}
