//! Fused head nonlinearity + loss, and coupled L2 weight decay.

use crate::error::{Error, Result};
use crate::model::Network;
use crate::numerics::{Real, Tensor};

pub const DEFAULT_WEIGHT_DECAY: f64 = 0.0004;

/// `total == data_loss + decay_loss`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    pub data_loss: f64,
    pub decay_loss: f64,
    pub total: f64,
}

impl LossValue {
    pub fn new(data_loss: f64, decay_loss: f64) -> Self {
        Self {
            data_loss,
            decay_loss,
            total: data_loss + decay_loss,
        }
    }
}

fn logit_shape<T: Copy>(logits: &Tensor<T>) -> Result<(usize, usize)> {
    match *logits.shape() {
        [b, k] => Ok((b, k)),
        _ => Err(Error::Shape(format!("logits must be (b, K), got {:?}", logits.shape()))),
    }
}

/// Mean multinomial cross-entropy of softmax(logits) against class indices.
/// Returns the loss and its gradient `(softmax - onehot) / b`.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (b, k) = logit_shape(logits)?;
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Label(format!("class index {bad} is outside [0, {k})")));
    }
    let inv_b = 1.0 / b as f64;
    let mut grad = Tensor::zeros_like(logits);
    let mut loss = 0.0;
    for ((row, g), &label) in logits.data().chunks_exact(k).zip(grad.data_mut().chunks_exact_mut(k)).zip(labels) {
        let row: Vec<f64> = row.iter().map(|v| v.to_f64_lossy()).collect();
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
        // the max term contributes exactly 1, so the rest go through ln_1p
        let argmax = row.iter().position(|&z| z == m).unwrap();
        let rest: f64 = exps.iter().enumerate().filter(|&(j, _)| j != argmax).map(|(_, e)| e).sum();
        let log_z = rest.ln_1p();
        loss -= (row[label] - m) - log_z;
        let total = 1.0 + rest;
        for (j, (gj, e)) in g.iter_mut().zip(&exps).enumerate() {
            let target = if j == label { 1.0 } else { 0.0 };
            *gj = T::from_f64_lossy((e / total - target) * inv_b);
        }
    }
    Ok((loss * inv_b, grad))
}

/// Mean binary cross-entropy of sigmoid(logits) over all `b * K` entries.
/// Returns the loss and its gradient `(sigmoid - target) / (b K)`.
pub fn sigmoid_bce<T: Real>(logits: &Tensor<T>, targets: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    let (b, k) = logit_shape(logits)?;
    if targets.shape() != logits.shape() {
        return Err(Error::Shape(format!(
            "targets {:?} do not match logits {:?}",
            targets.shape(),
            logits.shape()
        )));
    }
    if targets.data().iter().any(|&t| t != T::zero() && t != T::one()) {
        return Err(Error::Label("multi-label targets must be 0 or 1".into()));
    }
    let scale = 1.0 / (b * k) as f64;
    let mut grad = Tensor::zeros_like(logits);
    let mut loss = 0.0;
    for ((&z, &t), g) in logits.data().iter().zip(targets.data()).zip(grad.data_mut()) {
        let (z, t) = (z.to_f64_lossy(), t.to_f64_lossy());
        // softplus(z) - t z, with softplus(z) = max(z, 0) + ln(1 + e^-|z|)
        loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - t * z;
        let sig = if z >= 0.0 {
            1.0 / (1.0 + (-z).exp())
        } else {
            let e = z.exp();
            e / (1.0 + e)
        };
        *g = T::from_f64_lossy((sig - t) * scale);
    }
    Ok((loss * scale, grad))
}

/// Adds `lambda * w` to the gradient of every decaying weight (convolution and
/// dense weights) and returns `(lambda / 2) * sum(w^2)` over those weights.
/// `grads` is in [`Network::params`] order.
pub fn weight_decay_grad<T: Real>(net: &Network<T>, grads: &mut [Tensor<T>], lambda: f64) -> Result<f64> {
    let params = net.params();
    if params.len() != grads.len() {
        return Err(Error::Shape(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let lam = T::from_f64_lossy(lambda);
    let mut sq = 0.0;
    for (p, g) in params.iter().zip(grads.iter_mut()) {
        if !p.kind.decays() {
            continue;
        }
        if g.shape() != p.value.shape() {
            return Err(Error::Shape(format!("gradient for {} has the wrong shape", p.name)));
        }
        for (gv, &w) in g.data_mut().iter_mut().zip(p.value.data()) {
            *gv += lam * w;
            sq += w.to_f64_lossy().powi(2);
        }
    }
    Ok(0.5 * lambda * sq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Head, NetworkConfig};
    use crate::numerics::{grad_check, Rng};

    fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| 2.0 * rng.normal()).collect()).unwrap()
    }

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::new(&[3, 15], 0.7f64).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0, 7, 14]).unwrap();
        assert!((loss - 15f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_softmax_vanishes() {
        let logits = Tensor::from_vec(&[1, 3], vec![50.0f64, 0.0, 0.0]).unwrap();
        let (loss, _) = softmax_xent(&logits, &[0]).unwrap();
        assert!(loss < 1e-20 && loss >= 0.0, "{loss}");
        let mut prev = f64::INFINITY;
        for gap in [0.0, 1.0, 5.0, 20.0, 50.0] {
            let l = softmax_xent(&Tensor::from_vec(&[1, 2], vec![gap, 0.0]).unwrap(), &[0]).unwrap().0;
            assert!(l < prev);
            prev = l;
        }
    }

    #[test]
    fn softmax_shift_invariance_and_zero_sum_gradient() {
        let mut rng = Rng::new(1);
        let logits = random(&[4, 6], &mut rng);
        let labels = [0, 5, 2, 2];
        let (a, g) = softmax_xent(&logits, &labels).unwrap();
        let (b, _) = softmax_xent(&logits.map(|v| v + 123.0), &labels).unwrap();
        assert!((a - b).abs() < 1e-6);
        for row in g.data().chunks(6) {
            assert!(row.iter().sum::<f64>().abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_label_out_of_range() {
        let logits = Tensor::<f64>::zeros(&[1, 4]).unwrap();
        assert!(matches!(softmax_xent(&logits, &[4]), Err(Error::Label(_))));
    }

    #[test]
    fn loss_gradient_checks() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let logits = random(&[2, 4], &mut rng);
            let labels = [rng.int_inclusive(0, 3), rng.int_inclusive(0, 3)];
            let (_, g) = softmax_xent(&logits, &labels).unwrap();
            let e = grad_check(|z| softmax_xent(z, &labels).unwrap().0, &logits, 1e-5, &g).unwrap();
            assert!(e < 1e-4, "softmax {e}");

            let logits = random(&[2, 7], &mut rng);
            let targets = Tensor::from_vec(&[2, 7], (0..14).map(|_| f64::from(rng.bernoulli(0.5) as u8)).collect()).unwrap();
            let (_, g) = sigmoid_bce(&logits, &targets).unwrap();
            let e = grad_check(|z| sigmoid_bce(z, &targets).unwrap().0, &logits, 1e-5, &g).unwrap();
            assert!(e < 1e-4, "sigmoid {e}");
        }
    }

    #[test]
    fn bce_reference_values() {
        let zero = Tensor::<f64>::zeros(&[2, 3]).unwrap();
        let targets = Tensor::from_vec(&[2, 3], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((sigmoid_bce(&zero, &targets).unwrap().0 - 2f64.ln()).abs() < 1e-12);
        let sat = Tensor::from_vec(&[1, 1], vec![50.0f64]).unwrap();
        let one = Tensor::from_vec(&[1, 1], vec![1.0f64]).unwrap();
        let loss = sigmoid_bce(&sat, &one).unwrap().0;
        assert!((0.0..1e-20).contains(&loss));
        let half = Tensor::from_vec(&[1, 1], vec![0.5f64]).unwrap();
        assert!(matches!(sigmoid_bce(&sat, &half), Err(Error::Label(_))));
    }

    #[test]
    fn decay_touches_only_weights() {
        let mut cfg = NetworkConfig::new(4, 2, Head::Softmax);
        cfg.channels = 2;
        cfg.num_temporal_layers = 1;
        let mut net = Network::<f64>::zeros(cfg).unwrap();
        net.head.weight.data_mut()[0] = 2.0;
        net.norms[0].gamma.data_mut()[0] = 3.0;
        let mut grads: Vec<Tensor<f64>> = net.params().iter().map(|p| Tensor::zeros_like(p.value)).collect();
        let decay = weight_decay_grad(&net, &mut grads, DEFAULT_WEIGHT_DECAY).unwrap();
        assert!((decay - 0.5 * 0.0004 * 4.0).abs() < 1e-15);
        let names: Vec<String> = net.params().into_iter().map(|p| p.name).collect();
        for (name, g) in names.iter().zip(&grads) {
            let expected = if name == "head.weight" { 0.0008 } else { 0.0 };
            assert!((g.data()[0] - expected).abs() < 1e-15, "{name}");
            assert!(g.data()[1..].iter().all(|&v| v == 0.0));
        }
    }
}
