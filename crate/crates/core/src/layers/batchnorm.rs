//! Per-channel batch normalization over `(batch, channels, time, 1)`
//! activations.
//!
//! Statistics are taken over every `(sample, time)` position, padded frames
//! included. With `mask_stats` set, only the frames inside each sample's valid
//! length are counted; every position is still normalized with those
//! statistics.

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

use super::{LengthMask, Mode};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPSILON: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub momentum: f64,
    pub epsilon: f64,
    pub mask_stats: bool,
    updates: u64,
}

/// Batch statistics from one train-mode forward pass.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance.
    pub var: Vec<T>,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct BnCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    mode: Mode,
    /// Valid length per sample when statistics were masked.
    counted: Option<Vec<usize>>,
    count: usize,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(channels: usize, momentum: f64, epsilon: f64, mask_stats: bool) -> Result<Self> {
        if epsilon <= 0.0 {
            return Err(Error::Numeric(format!("batch norm epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            gamma: Tensor::new(&[channels], T::one())?,
            beta: Tensor::zeros(&[channels])?,
            running_mean: Tensor::zeros(&[channels])?,
            running_var: Tensor::new(&[channels], T::one())?,
            momentum,
            epsilon,
            mask_stats,
            updates: 0,
        })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Number of running-statistic updates so far.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Overwrite running statistics and mark them initialized.
    pub fn set_running_stats(&mut self, mean: Tensor<T>, var: Tensor<T>, updates: u64) -> Result<()> {
        if mean.shape() != [self.channels()] || var.shape() != [self.channels()] {
            return Err(Error::Shape("running statistics must be per-channel".into()));
        }
        if var.data().iter().any(|&v| v < T::zero()) {
            return Err(Error::Numeric("running variance must be non-negative".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        self.updates = updates;
        Ok(())
    }

    fn geometry(&self, x: &Tensor<T>) -> Result<(usize, usize)> {
        match *x.shape() {
            [b, c, h, 1] if c == self.channels() => Ok((b, h)),
            _ => Err(Error::Shape(format!(
                "batch norm expects (b, {}, h, 1), got {:?}",
                self.channels(),
                x.shape()
            ))),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mask: &LengthMask, mode: Mode) -> Result<(Tensor<T>, BnCache<T>, Option<BatchStats<T>>)> {
        match mode {
            Mode::Train => {
                let (y, cache, stats) = self.forward_train(x, mask)?;
                Ok((y, cache, Some(stats)))
            }
            Mode::Eval => {
                let (y, cache) = self.forward_eval(x)?;
                Ok((y, cache, None))
            }
        }
    }

    pub fn forward_train(
        &self,
        x: &Tensor<T>,
        mask: &LengthMask,
    ) -> Result<(Tensor<T>, BnCache<T>, BatchStats<T>)> {
        let (b, h) = self.geometry(x)?;
        let c = self.channels();
        if mask.len() != b {
            return Err(Error::Shape(format!("mask has {} samples, batch has {b}", mask.len())));
        }
        mask.check_height(h)?;
        let counted: Option<Vec<usize>> = self.mask_stats.then(|| mask.valid().to_vec());
        let span = |s: usize| counted.as_ref().map_or(h, |v| v[s]);
        let count: usize = (0..b).map(span).sum();
        let n = T::from_usize(count).unwrap();
        let eps = T::from_f64_lossy(self.epsilon);

        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut acc = T::zero();
            for s in 0..b {
                let base = (s * c + ch) * h;
                for &v in &xd[base..base + span(s)] {
                    acc += v;
                }
            }
            let mu = acc / n;
            let mut acc2 = T::zero();
            for s in 0..b {
                let base = (s * c + ch) * h;
                for &v in &xd[base..base + span(s)] {
                    acc2 += (v - mu) * (v - mu);
                }
            }
            mean[ch] = mu;
            var[ch] = acc2 / n;
        }

        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (y, xhat) = self.normalize(x, b, h, &mean, &inv_std);
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                mode: Mode::Train,
                counted,
                count,
            },
            BatchStats { mean, var, count },
        ))
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        if self.updates == 0 {
            return Err(Error::UninitializedStats);
        }
        let (b, h) = self.geometry(x)?;
        let eps = T::from_f64_lossy(self.epsilon);
        let inv_std: Vec<T> = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::one() / (v + eps).sqrt())
            .collect();
        let (y, xhat) = self.normalize(x, b, h, self.running_mean.data(), &inv_std);
        Ok((
            y,
            BnCache {
                xhat,
                inv_std,
                mode: Mode::Eval,
                counted: None,
                count: b * h,
            },
        ))
    }

    fn normalize(&self, x: &Tensor<T>, b: usize, h: usize, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let c = self.channels();
        let mut xhat = Tensor::zeros_like(x);
        let mut y = Tensor::zeros_like(x);
        let (g, be) = (self.gamma.data(), self.beta.data());
        for s in 0..b {
            for ch in 0..c {
                let base = (s * c + ch) * h;
                let src = &x.data()[base..base + h];
                let xh = &mut xhat.data_mut()[base..base + h];
                for (o, &v) in xh.iter_mut().zip(src) {
                    *o = (v - mean[ch]) * inv_std[ch];
                }
                let out = &mut y.data_mut()[base..base + h];
                for (o, &v) in out.iter_mut().zip(xhat.data()[base..base + h].iter()) {
                    *o = g[ch] * v + be[ch];
                }
            }
        }
        (y, xhat)
    }

    /// Fold one batch's statistics into the running estimates. The running
    /// variance uses the unbiased batch estimate.
    pub fn update_running(&mut self, stats: &BatchStats<T>) {
        let m = T::from_f64_lossy(self.momentum);
        let one_m = T::one() - m;
        let correction = if stats.count > 1 {
            T::from_usize(stats.count).unwrap() / T::from_usize(stats.count - 1).unwrap()
        } else {
            T::one()
        };
        for ch in 0..self.channels() {
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = m * *rm + one_m * stats.mean[ch];
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = m * *rv + one_m * stats.var[ch] * correction;
        }
        self.updates += 1;
    }

    /// Returns `(grad_input, grad_gamma, grad_beta)`.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        if grad_out.shape() != cache.xhat.shape() {
            return Err(Error::Shape(format!(
                "batch norm grad has shape {:?}, expected {:?}",
                grad_out.shape(),
                cache.xhat.shape()
            )));
        }
        let (b, h) = self.geometry(grad_out)?;
        let c = self.channels();
        let gy = grad_out.data();
        let xh = cache.xhat.data();
        let mut gx = Tensor::zeros_like(grad_out);
        let mut ggamma = Tensor::zeros_like(&self.gamma);
        let mut gbeta = Tensor::zeros_like(&self.beta);
        let n = T::from_usize(cache.count).unwrap();

        for ch in 0..c {
            let gamma = self.gamma.data()[ch];
            let inv_std = cache.inv_std[ch];
            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for s in 0..b {
                let base = (s * c + ch) * h;
                for t in 0..h {
                    sum_g += gy[base + t];
                    sum_gx += gy[base + t] * xh[base + t];
                }
            }
            ggamma.data_mut()[ch] = sum_gx;
            gbeta.data_mut()[ch] = sum_g;

            let gxd = gx.data_mut();
            match cache.mode {
                Mode::Eval => {
                    for s in 0..b {
                        let base = (s * c + ch) * h;
                        for t in 0..h {
                            gxd[base + t] = gamma * gy[base + t] * inv_std;
                        }
                    }
                }
                Mode::Train => {
                    // Positions inside the statistics window also feed the mean
                    // and variance; positions outside only see the affine map.
                    let sg = gamma * sum_g / n;
                    let sgx = gamma * sum_gx / n;
                    for s in 0..b {
                        let base = (s * c + ch) * h;
                        let span = cache.counted.as_ref().map_or(h, |v| v[s]);
                        for t in 0..h {
                            let g = gamma * gy[base + t];
                            gxd[base + t] = if t < span {
                                (g - sg - xh[base + t] * sgx) * inv_std
                            } else {
                                g * inv_std
                            };
                        }
                    }
                }
            }
        }
        Ok((gx, ggamma, gbeta))
    }
}
