//! Brute-force oracles: an unbatched, unmasked forward pass written as plain
//! loops, and an exhaustive-threshold EER.

use serde::Serialize;

use crate::data::{make_batch, Sample};
use crate::error::{Error, Result};
use crate::layers::LengthMask;
use crate::metrics::interpolate_crossing;
use crate::model::Network;
use crate::numerics::{Real, Rng, Tensor};

/// Eval-mode logits for one exact-length `(frames, bins)` input. No mask, no
/// batching, no GEMM.
pub fn reference_forward_unpadded<T: Real>(net: &Network<T>, features: &Tensor<T>) -> Result<Vec<T>> {
    let cfg = net.config();
    let (h, w) = match *features.shape() {
        [h, w] if w == cfg.input_bins => (h, w),
        _ => {
            return Err(Error::Shape(format!(
                "reference expects (frames, {}), got {:?}",
                cfg.input_bins,
                features.shape()
            )))
        }
    };
    let minimum = cfg.min_input_frames();
    if h < minimum {
        return Err(Error::TooShort(format!("{h} frames, the network needs at least {minimum}")));
    }
    let c = cfg.channels;
    let x = features.data();
    let fb = net.filterbank.weight.data();

    // act[ch][t]
    let mut act: Vec<Vec<T>> = vec![vec![T::zero(); h]; c];
    for (ch, row) in act.iter_mut().enumerate() {
        for (t, out) in row.iter_mut().enumerate() {
            let mut s = T::zero();
            for f in 0..w {
                s += fb[ch * w + f] * x[t * w + f];
            }
            *out = s;
        }
    }
    normalize_relu(net, 0, &mut act)?;

    for (layer, conv) in net.temporal.iter().enumerate() {
        let (k, s) = (conv.kernel(), conv.stride);
        let len = act[0].len();
        if len < k {
            return Err(Error::TooShort(format!("layer {} input has {len} frames", layer + 2)));
        }
        let out_len = (len - k) / s + 1;
        let wt = conv.weight.data();
        let mut next = vec![vec![T::zero(); out_len]; c];
        for (co, row) in next.iter_mut().enumerate() {
            for (t, out) in row.iter_mut().enumerate() {
                let mut acc = T::zero();
                for (ci, input) in act.iter().enumerate() {
                    for j in 0..k {
                        acc += wt[(co * c + ci) * k + j] * input[t * s + j];
                    }
                }
                *out = acc;
            }
        }
        act = next;
        normalize_relu(net, layer + 1, &mut act)?;
    }

    let pooled: Vec<T> = act
        .iter()
        .map(|row| row.iter().copied().fold(T::zero(), |a, b| a + b) / T::from_usize(row.len()).unwrap())
        .collect();
    let kk = cfg.num_classes;
    let hw = net.head.weight.data();
    Ok((0..kk)
        .map(|j| {
            let mut z = net.head.bias.data()[j];
            for (i, &p) in pooled.iter().enumerate() {
                z += p * hw[i * kk + j];
            }
            z
        })
        .collect())
}

fn normalize_relu<T: Real>(net: &Network<T>, index: usize, act: &mut [Vec<T>]) -> Result<()> {
    let bn = &net.norms[index];
    if bn.updates() == 0 {
        return Err(Error::UninitializedStats);
    }
    let eps = T::from_f64_lossy(bn.epsilon);
    for (ch, row) in act.iter_mut().enumerate() {
        let scale = bn.gamma.data()[ch] / (bn.running_var.data()[ch] + eps).sqrt();
        let mean = bn.running_mean.data()[ch];
        let shift = bn.beta.data()[ch];
        for v in row.iter_mut() {
            *v = ((*v - mean) * scale + shift).max(T::zero());
        }
    }
    Ok(())
}

/// EER by exhaustive scan: FPR and FNR are recounted from scratch at every
/// midpoint between consecutive distinct scores and at both infinities.
pub fn reference_eer_bruteforce(scores: &[f64], targets: &[bool]) -> Result<f64> {
    if scores.len() != targets.len() {
        return Err(Error::Shape(format!("{} scores for {} targets", scores.len(), targets.len())));
    }
    let pos = targets.iter().filter(|&&t| t).count();
    let neg = targets.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels(format!("{pos} positives and {neg} negatives")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(sorted.windows(2).map(|p| p[0] + (p[1] - p[0]) / 2.0));
    thresholds.push(f64::INFINITY);

    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let mut fp = 0;
            let mut fneg = 0;
            for (&s, &t) in scores.iter().zip(targets) {
                let predicted = s >= th;
                if predicted && !t {
                    fp += 1;
                }
                if !predicted && t {
                    fneg += 1;
                }
            }
            (fp as f64 / neg as f64, fneg as f64 / pos as f64)
        })
        .collect();
    Ok(interpolate_crossing(&points))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifyReport {
    pub samples: usize,
    /// Largest absolute logit difference between the batched masked forward
    /// and the per-sample reference.
    pub max_deviation: f64,
}

/// Runs `samples` through the batched masked forward in batches of
/// `batch_size` and compares every logit with the unbatched reference,
/// evaluated in 64-bit.
pub fn verify(net: &Network<f32>, samples: &[Sample], batch_size: usize) -> Result<VerifyReport> {
    let reference = net.cast::<f64>();
    let k = net.config().num_classes;
    let min = net.config().min_input_frames();
    let mut max_deviation = 0.0f64;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs, true, k, None, min, &mut Rng::new(0))?;
        let logits = net.forward_eval(&batch.x, &batch.mask)?;
        for (i, s) in chunk.iter().enumerate() {
            let expected = reference_forward_unpadded(&reference, &s.features.data.cast::<f64>())?;
            for (j, e) in expected.iter().enumerate() {
                let got = f64::from(logits.data()[i * k + j]);
                max_deviation = max_deviation.max((got - e).abs());
            }
        }
    }
    Ok(VerifyReport {
        samples: samples.len(),
        max_deviation,
    })
}

/// Batched masked logits for inputs of the given valid lengths, each padded
/// to `valid + padding[i]` frames inside a shared tensor.
pub fn padded_batch_logits<T: Real>(net: &Network<T>, inputs: &[Tensor<T>], padding: &[usize]) -> Result<Tensor<T>> {
    let w = net.config().input_bins;
    let h = inputs.iter().zip(padding).map(|(x, p)| x.dim(0) + p).max().unwrap_or(0);
    let mut x = Tensor::zeros(&[inputs.len(), 1, h, w])?;
    for (i, input) in inputs.iter().enumerate() {
        x.data_mut()[i * h * w..i * h * w + input.len()].copy_from_slice(input.data());
    }
    let mask = LengthMask::new(inputs.iter().map(|t| t.dim(0)).collect())?;
    net.forward_eval(&x, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::eer;
    use crate::model::{Head, NetworkConfig};

    fn tiny(seed: u64) -> Network<f64> {
        let mut cfg = NetworkConfig::new(6, 3, Head::Softmax);
        cfg.channels = 5;
        let mut rng = Rng::new(seed);
        let mut net = Network::build(cfg, &mut rng).unwrap();
        for bn in &mut net.norms {
            let c = bn.channels();
            let mean = Tensor::from_vec(&[c], (0..c).map(|_| 0.3 * rng.normal()).collect()).unwrap();
            let var = Tensor::from_vec(&[c], (0..c).map(|_| rng.uniform_in(0.5, 2.0)).collect()).unwrap();
            bn.set_running_stats(mean, var, 1).unwrap();
        }
        net
    }

    fn input(frames: usize, rng: &mut Rng) -> Tensor<f64> {
        Tensor::from_vec(&[frames, 6], (0..frames * 6).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn matches_batched_forward_with_and_without_padding() {
        let net = tiny(1);
        let mut rng = Rng::new(2);
        let x = input(40, &mut rng);
        let reference = reference_forward_unpadded(&net, &x).unwrap();
        for pad in [0, 37] {
            let got = padded_batch_logits(&net, std::slice::from_ref(&x), &[pad]).unwrap();
            for (a, b) in got.data().iter().zip(&reference) {
                assert!((a - b).abs() < 1e-6, "pad {pad}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn batch_position_does_not_matter() {
        let net = tiny(3);
        let mut rng = Rng::new(4);
        let inputs: Vec<_> = [15, 70, 33].iter().map(|&n| input(n, &mut rng)).collect();
        let got = padded_batch_logits(&net, &inputs, &[0, 0, 0]).unwrap();
        for (i, x) in inputs.iter().enumerate() {
            let r = reference_forward_unpadded(&net, x).unwrap();
            for (j, e) in r.iter().enumerate() {
                assert!((got.get(&[i, j]) - e).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn too_short_reference_input() {
        let net = tiny(0);
        assert!(matches!(
            reference_forward_unpadded(&net, &input(14, &mut Rng::new(0))),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn bruteforce_eer_examples_and_agreement() {
        assert_eq!(reference_eer_bruteforce(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.5);
        assert_eq!(reference_eer_bruteforce(&[0.1, 0.2, 0.7, 0.9], &[false, false, true, true]).unwrap(), 0.0);
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let n = rng.int_inclusive(2, 30);
            // coarse scores force ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.uniform() * 6.0).floor() / 6.0).collect();
            let mut targets: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.5)).collect();
            targets[0] = !targets[1];
            let fast = eer(&scores, &targets).unwrap();
            let slow = reference_eer_bruteforce(&scores, &targets).unwrap();
            assert!((fast - slow).abs() < 1e-9, "{fast} vs {slow}");
        }
    }
}
