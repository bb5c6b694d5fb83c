//! Bias-free valid convolutions over the time axis.
//!
//! Activations are `(batch, channels, time, 1)`. The filterbank layer spans
//! the whole frequency axis of a `(batch, 1, time, bins)` input, so it is a
//! per-frame projection; the temporal layers slide a `kernel x 1` window with
//! a stride over time.

use crate::error::{Error, Result};
use crate::numerics::gemm::{gemm, MatMut, MatRef};
use crate::numerics::{Real, Rng, Tensor};

use super::mask::conv_output_len;

/// He-normal draws for a weight tensor of the given shape.
pub fn he_normal<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Result<Tensor<T>> {
    let std = (2.0 / fan_in as f64).sqrt();
    let len = shape.iter().product();
    let data = (0..len).map(|_| T::from_f64_lossy(rng.normal() * std)).collect();
    Tensor::from_vec(shape, data)
}

fn expect_4d<T: Copy>(x: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [b, d, h, w] => Ok([b, d, h, w]),
        _ => Err(Error::Shape(format!(
            "{what} expects a 4-D tensor, got {:?}",
            x.shape()
        ))),
    }
}

/// Learned filter bank: weight `(channels, 1, 1, bins)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterbankConv<T> {
    pub weight: Tensor<T>,
}

impl<T: Real> FilterbankConv<T> {
    pub fn new(weight: Tensor<T>) -> Result<Self> {
        match *weight.shape() {
            [_, 1, 1, _] => Ok(Self { weight }),
            _ => Err(Error::Shape(format!(
                "filterbank weight must be (out, 1, 1, bins), got {:?}",
                weight.shape()
            ))),
        }
    }

    pub fn he_init(channels: usize, bins: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(he_normal(&[channels, 1, 1, bins], bins, rng)?)
    }

    pub fn channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn bins(&self) -> usize {
        self.weight.dim(3)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let [b, d, h, w] = expect_4d(x, "filterbank conv")?;
        if d != 1 {
            return Err(Error::Shape(format!("filterbank input depth {d}, expected 1")));
        }
        if w != self.bins() {
            return Err(Error::Shape(format!(
                "filterbank kernel spans {} bins but the input has {w}",
                self.bins()
            )));
        }
        Ok([b, d, h, w])
    }

    /// `out[b, c, t, 0] = sum_j weight[c, 0, 0, j] * x[b, 0, t, j]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, _, h, w] = self.check_input(x)?;
        let c = self.channels();
        let mut out = Tensor::zeros(&[b, c, h, 1])?;
        let wmat = MatRef::row_major(self.weight.data(), 0, c, w);
        for s in 0..b {
            gemm(
                T::one(),
                wmat,
                MatRef::row_major(x.data(), s * h * w, h, w).t(),
                T::zero(),
                MatMut::row_major(out.data_mut(), s * c * h, c, h),
            );
        }
        Ok(out)
    }

    fn check_grad(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<[usize; 4]> {
        let [b, d, h, w] = self.check_input(x)?;
        let c = self.channels();
        if grad_out.shape() != [b, c, h, 1] {
            return Err(Error::Shape(format!(
                "filterbank grad has shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, c, h, 1]
            )));
        }
        Ok([b, d, h, w])
    }

    /// Gradient with respect to the weight only.
    pub fn weight_grad(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let [b, _, h, w] = self.check_grad(x, grad_out)?;
        let c = self.channels();
        let mut gw = Tensor::zeros_like(&self.weight);
        for s in 0..b {
            let gy = MatRef::row_major(grad_out.data(), s * c * h, c, h);
            let xs = MatRef::row_major(x.data(), s * h * w, h, w);
            gemm(T::one(), gy, xs, T::one(), MatMut::row_major(gw.data_mut(), 0, c, w));
        }
        Ok(gw)
    }

    /// Returns `(grad_input, grad_weight)`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let [b, _, h, w] = self.check_grad(x, grad_out)?;
        let c = self.channels();
        let mut gx = Tensor::zeros_like(x);
        let wmat = MatRef::row_major(self.weight.data(), 0, c, w);
        for s in 0..b {
            let gy = MatRef::row_major(grad_out.data(), s * c * h, c, h);
            gemm(
                T::one(),
                gy.t(),
                wmat,
                T::zero(),
                MatMut::row_major(gx.data_mut(), s * h * w, h, w),
            );
        }
        Ok((gx, self.weight_grad(x, grad_out)?))
    }
}

/// Strided temporal convolution: weight `(out, in, kernel, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalConv<T> {
    pub weight: Tensor<T>,
    pub stride: usize,
}

impl<T: Real> TemporalConv<T> {
    pub fn new(weight: Tensor<T>, stride: usize) -> Result<Self> {
        match *weight.shape() {
            [_, _, _, 1] if stride >= 1 => Ok(Self { weight, stride }),
            _ => Err(Error::Shape(format!(
                "temporal weight must be (out, in, kernel, 1) with stride >= 1, got {:?} / {stride}",
                weight.shape()
            ))),
        }
    }

    pub fn he_init(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = he_normal(&[out_channels, in_channels, kernel, 1], in_channels * kernel, rng)?;
        Self::new(weight, stride)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1)
    }

    pub fn kernel(&self) -> usize {
        self.weight.dim(2)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len()
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let [b, d, h, w] = expect_4d(x, "temporal conv")?;
        if d != self.in_channels() || w != 1 {
            return Err(Error::Shape(format!(
                "temporal conv expects (b, {}, h, 1), got {:?}",
                self.in_channels(),
                x.shape()
            )));
        }
        if h < self.kernel() {
            return Err(Error::TooShort(format!(
                "temporal conv needs at least {} frames, got {h}",
                self.kernel()
            )));
        }
        Ok((b, h, conv_output_len(h, self.kernel(), self.stride)))
    }

    /// Tap `k` of the weight as a `(out, in)` matrix.
    fn tap(&self, k: usize) -> MatRef<'_, T> {
        let (co, ci, kt) = (self.out_channels(), self.in_channels(), self.kernel());
        MatRef::strided(self.weight.data(), k, co, ci, ci * kt, kt)
    }

    /// `out[b, c, t] = sum_{c', k} W[c, c', k] * x[b, c', stride * t + k]`.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, h, h_out) = self.geometry(x)?;
        let (co, ci) = (self.out_channels(), self.in_channels());
        let mut out = Tensor::zeros(&[b, co, h_out, 1])?;
        for s in 0..b {
            for k in 0..self.kernel() {
                let shifted = MatRef::strided(x.data(), s * ci * h + k, ci, h_out, h, self.stride);
                let beta = if k == 0 { T::zero() } else { T::one() };
                gemm(
                    T::one(),
                    self.tap(k),
                    shifted,
                    beta,
                    MatMut::row_major(out.data_mut(), s * co * h_out, co, h_out),
                );
            }
        }
        Ok(out)
    }

    /// Returns `(grad_input, grad_weight)`.
    pub fn backward(&self, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let (b, h, h_out) = self.geometry(x)?;
        let (co, ci, kt) = (self.out_channels(), self.in_channels(), self.kernel());
        if grad_out.shape() != [b, co, h_out, 1] {
            return Err(Error::Shape(format!(
                "temporal grad has shape {:?}, expected {:?}",
                grad_out.shape(),
                [b, co, h_out, 1]
            )));
        }
        let mut gx = Tensor::zeros_like(x);
        let mut gw = Tensor::zeros_like(&self.weight);
        for s in 0..b {
            let gy = MatRef::row_major(grad_out.data(), s * co * h_out, co, h_out);
            for k in 0..kt {
                let shifted = MatRef::strided(x.data(), s * ci * h + k, ci, h_out, h, self.stride);
                gemm(
                    T::one(),
                    gy,
                    shifted.t(),
                    T::one(),
                    MatMut::strided(gw.data_mut(), k, co, ci, ci * kt, kt),
                );
                gemm(
                    T::one(),
                    self.tap(k).t(),
                    gy,
                    T::one(),
                    MatMut::strided(gx.data_mut(), s * ci * h + k, ci, h_out, h, self.stride),
                );
            }
        }
        Ok((gx, gw))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Weighted sum of outputs, so every output position carries gradient.
    fn probe_loss(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
        y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn full_size_parameter_counts() {
        let mut rng = Rng::new(0);
        assert_eq!(FilterbankConv::<f32>::he_init(256, 552, &mut rng).unwrap().param_count(), 141_312);
        assert_eq!(FilterbankConv::<f32>::he_init(256, 201, &mut rng).unwrap().param_count(), 51_456);
        assert_eq!(
            TemporalConv::<f32>::he_init(256, 256, 3, 2, &mut rng).unwrap().param_count(),
            196_608
        );
    }

    #[test]
    fn zero_and_selector_filters() {
        let (bins, h) = (5, 4);
        let mut w = Tensor::<f64>::zeros(&[2, 1, 1, bins]).unwrap();
        w.set(&[1, 0, 0, 3], 1.0); // channel 1 selects bin 3, channel 0 is all zeros
        let conv = FilterbankConv::new(w).unwrap();
        let mut rng = Rng::new(3);
        let x = random(&[2, 1, h, bins], &mut rng);
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, h, 1]);
        for b in 0..2 {
            for t in 0..h {
                assert_eq!(y.get(&[b, 0, t, 0]), 0.0);
                assert_eq!(y.get(&[b, 1, t, 0]), x.get(&[b, 0, t, 3]));
            }
        }
    }

    #[test]
    fn filterbank_rejects_wrong_width() {
        let conv = FilterbankConv::<f32>::new(Tensor::zeros(&[4, 1, 1, 8]).unwrap()).unwrap();
        let x = Tensor::zeros(&[1, 1, 10, 7]).unwrap();
        assert!(matches!(conv.forward(&x), Err(Error::Shape(_))));
    }

    #[test]
    fn temporal_output_lengths() {
        let conv = TemporalConv::<f32>::new(Tensor::zeros(&[2, 2, 3, 1]).unwrap(), 2).unwrap();
        for (h, expect) in [(3, 1), (30, 14), (15, 7)] {
            let y = conv.forward(&Tensor::zeros(&[1, 2, h, 1]).unwrap()).unwrap();
            assert_eq!(y.dim(2), expect);
        }
        assert!(matches!(
            conv.forward(&Tensor::zeros(&[1, 2, 2, 1]).unwrap()),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn selector_kernel_picks_strided_frames() {
        let c = 3;
        let mut w = Tensor::<f64>::zeros(&[c, c, 3, 1]).unwrap();
        for i in 0..c {
            w.set(&[i, i, 0, 0], 1.0);
        }
        let conv = TemporalConv::new(w, 2).unwrap();
        let mut rng = Rng::new(5);
        let x = random(&[2, c, 11, 1], &mut rng);
        let y = conv.forward(&x).unwrap();
        for b in 0..2 {
            for ch in 0..c {
                for t in 0..y.dim(2) {
                    assert_eq!(y.get(&[b, ch, t, 0]), x.get(&[b, ch, 2 * t, 0]));
                }
            }
        }
    }

    #[test]
    fn temporal_matches_direct_sum() {
        let mut rng = Rng::new(11);
        let conv = TemporalConv::<f64>::he_init(4, 5, 3, 2, &mut rng).unwrap();
        let x = random(&[2, 4, 9, 1], &mut rng);
        let y = conv.forward(&x).unwrap();
        for b in 0..2 {
            for c in 0..5 {
                for t in 0..4 {
                    let mut acc = 0.0;
                    for ci in 0..4 {
                        for k in 0..3 {
                            acc += conv.weight.get(&[c, ci, k, 0]) * x.get(&[b, ci, 2 * t + k, 0]);
                        }
                    }
                    assert!((acc - y.get(&[b, c, t, 0])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn filterbank_gradients() {
        for seed in 0..5 {
            let mut rng = Rng::new(100 + seed);
            let conv = FilterbankConv::<f64>::he_init(3, 6, &mut rng).unwrap();
            let x = random(&[2, 1, 5, 6], &mut rng);
            let r = random(&[2, 3, 5, 1], &mut rng);
            let (gx, gw) = conv.backward(&x, &r).unwrap();
            let ex = grad_check(|x| probe_loss(&conv.forward(x).unwrap(), &r), &x, 1e-5, &gx).unwrap();
            let ew = grad_check(
                |w| probe_loss(&FilterbankConv::new(w.clone()).unwrap().forward(&x).unwrap(), &r),
                &conv.weight,
                1e-5,
                &gw,
            )
            .unwrap();
            assert!(ex < 1e-4 && ew < 1e-4, "{ex} {ew}");
        }
    }

    #[test]
    fn temporal_gradients() {
        for seed in 0..5 {
            let mut rng = Rng::new(200 + seed);
            let conv = TemporalConv::<f64>::he_init(3, 4, 3, 2, &mut rng).unwrap();
            let x = random(&[2, 3, 10, 1], &mut rng);
            let r = random(&[2, 4, 4, 1], &mut rng);
            let (gx, gw) = conv.backward(&x, &r).unwrap();
            let ex = grad_check(|x| probe_loss(&conv.forward(x).unwrap(), &r), &x, 1e-5, &gx).unwrap();
            let ew = grad_check(
                |w| probe_loss(&TemporalConv::new(w.clone(), 2).unwrap().forward(&x).unwrap(), &r),
                &conv.weight,
                1e-5,
                &gw,
            )
            .unwrap();
            assert!(ex < 1e-4 && ew < 1e-4, "{ex} {ew}");
        }
    }
}
