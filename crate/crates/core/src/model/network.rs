use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    masked_global_mean_pool, masked_pool_backward, min_input_len, relu_backward, relu_forward,
    BatchNorm, BatchStats, BnCache, Dense, FilterbankConv, LengthMask, Mode, TemporalConv,
    DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
use crate::numerics::{Real, Rng, Tensor};

/// Output nonlinearity. Softmax pairs with single-label tasks, sigmoid with
/// multi-label tasks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_bins: usize,
    pub num_classes: usize,
    pub head: Head,
    pub channels: usize,
    pub num_temporal_layers: usize,
    pub kernel_time: usize,
    pub stride_time: usize,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    pub bn_mask_stats: bool,
}

impl NetworkConfig {
    /// 256 channels, three kernel-3 stride-2 temporal layers.
    pub fn new(input_bins: usize, num_classes: usize, head: Head) -> Self {
        Self {
            input_bins,
            num_classes,
            head,
            channels: 256,
            num_temporal_layers: 3,
            kernel_time: 3,
            stride_time: 2,
            bn_momentum: DEFAULT_MOMENTUM,
            bn_epsilon: DEFAULT_EPSILON,
            bn_mask_stats: false,
        }
    }

    /// 552 bins (44.1 kHz), 15 scenes, softmax.
    pub fn scene() -> Self {
        Self::new(552, 15, Head::Softmax)
    }

    /// 201 bins (16 kHz), 7 tags, sigmoid.
    pub fn tagging() -> Self {
        Self::new(201, 7, Head::Sigmoid)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_bins", self.input_bins),
            ("num_classes", self.num_classes),
            ("channels", self.channels),
            ("kernel_time", self.kernel_time),
            ("stride_time", self.stride_time),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::ConfigMismatch(format!("{name} must be positive")));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return Err(Error::ConfigMismatch(
                "bn_momentum must lie in [0, 1) and bn_epsilon must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Shortest input (in frames) whose pooled window is non-empty.
    pub fn min_input_frames(&self) -> usize {
        min_input_len(self.num_temporal_layers, self.kernel_time, self.stride_time)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    BnScale,
    BnShift,
    DenseWeight,
    DenseBias,
}

impl ParamKind {
    /// Only convolution and dense weights receive weight decay.
    pub fn decays(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::DenseWeight)
    }
}

#[derive(Debug)]
pub struct ParamRef<'a, T> {
    pub name: String,
    pub kind: ParamKind,
    pub value: &'a Tensor<T>,
}

/// One row of the architecture table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerRow {
    pub index: usize,
    pub layer: &'static str,
    pub depth: usize,
    pub height: String,
    pub width: usize,
    pub params: Option<usize>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    input: Tensor<T>,
    /// Mask entering each conv stage; the last entry is the pooling mask.
    masks: Vec<LengthMask>,
    norms: Vec<BnCache<T>>,
    /// Post-ReLU output of each conv stage.
    activations: Vec<Tensor<T>>,
    pooled: Tensor<T>,
}

impl<T> Trace<T> {
    pub fn pooled(&self) -> &Tensor<T> {
        &self.pooled
    }

    pub fn pool_mask(&self) -> &LengthMask {
        self.masks.last().expect("trace always holds the input mask")
    }
}

pub struct ForwardPass<T> {
    pub logits: Tensor<T>,
    pub trace: Trace<T>,
    /// Batch statistics per batch-norm layer (train mode only).
    pub stats: Vec<BatchStats<T>>,
}

/// Filterbank conv, then `num_temporal_layers` strided temporal convs, each
/// followed by batch norm and ReLU; masked global mean pooling; dense head.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    config: NetworkConfig,
    pub filterbank: FilterbankConv<T>,
    pub temporal: Vec<TemporalConv<T>>,
    /// One per conv layer, filterbank first.
    pub norms: Vec<BatchNorm<T>>,
    pub head: Dense<T>,
}

impl<T: Real> Network<T> {
    /// He-normal weights drawn in layer order; unit gamma, zero beta, zero
    /// dense bias.
    pub fn build(config: NetworkConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let filterbank = FilterbankConv::he_init(c, config.input_bins, rng)?;
        let temporal = (0..config.num_temporal_layers)
            .map(|_| TemporalConv::he_init(c, c, config.kernel_time, config.stride_time, rng))
            .collect::<Result<_>>()?;
        let head = Dense::he_init(c, config.num_classes, rng)?;
        Self::assemble(config, filterbank, temporal, head)
    }

    /// All-zero weights; used as the skeleton when loading checkpoints.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let filterbank = FilterbankConv::new(Tensor::zeros(&[c, 1, 1, config.input_bins])?)?;
        let temporal = (0..config.num_temporal_layers)
            .map(|_| {
                TemporalConv::new(Tensor::zeros(&[c, c, config.kernel_time, 1])?, config.stride_time)
            })
            .collect::<Result<_>>()?;
        let head = Dense::new(
            Tensor::zeros(&[c, config.num_classes])?,
            Tensor::zeros(&[config.num_classes])?,
        )?;
        Self::assemble(config, filterbank, temporal, head)
    }

    fn assemble(
        config: NetworkConfig,
        filterbank: FilterbankConv<T>,
        temporal: Vec<TemporalConv<T>>,
        head: Dense<T>,
    ) -> Result<Self> {
        let norms = (0..=config.num_temporal_layers)
            .map(|_| {
                BatchNorm::new(
                    config.channels,
                    config.bn_momentum,
                    config.bn_epsilon,
                    config.bn_mask_stats,
                )
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            filterbank,
            temporal,
            norms,
            head,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut norms = Vec::with_capacity(self.norms.len());
        for bn in &self.norms {
            let mut out = BatchNorm::new(bn.channels(), bn.momentum, bn.epsilon, bn.mask_stats)
                .expect("validated epsilon");
            out.gamma = bn.gamma.cast();
            out.beta = bn.beta.cast();
            out.set_running_stats(bn.running_mean.cast(), bn.running_var.cast(), bn.updates())
                .expect("same channel count");
            norms.push(out);
        }
        Network {
            config: self.config.clone(),
            filterbank: FilterbankConv {
                weight: self.filterbank.weight.cast(),
            },
            temporal: self
                .temporal
                .iter()
                .map(|t| TemporalConv {
                    weight: t.weight.cast(),
                    stride: t.stride,
                })
                .collect(),
            norms,
            head: Dense {
                weight: self.head.weight.cast(),
                bias: self.head.bias.cast(),
            },
        }
    }

    /// Trainable parameters in a fixed order.
    pub fn params(&self) -> Vec<ParamRef<'_, T>> {
        let mut out = vec![ParamRef {
            name: "filterbank.weight".into(),
            kind: ParamKind::ConvWeight,
            value: &self.filterbank.weight,
        }];
        for (i, bn) in self.norms.iter().enumerate() {
            if i > 0 {
                out.push(ParamRef {
                    name: format!("temporal{i}.weight"),
                    kind: ParamKind::ConvWeight,
                    value: &self.temporal[i - 1].weight,
                });
            }
            out.push(ParamRef {
                name: format!("bn{i}.gamma"),
                kind: ParamKind::BnScale,
                value: &bn.gamma,
            });
            out.push(ParamRef {
                name: format!("bn{i}.beta"),
                kind: ParamKind::BnShift,
                value: &bn.beta,
            });
        }
        out.push(ParamRef {
            name: "head.weight".into(),
            kind: ParamKind::DenseWeight,
            value: &self.head.weight,
        });
        out.push(ParamRef {
            name: "head.bias".into(),
            kind: ParamKind::DenseBias,
            value: &self.head.bias,
        });
        out
    }

    /// Mutable access in the same order as [`Network::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.filterbank.weight];
        let mut temporal = self.temporal.iter_mut();
        for (i, bn) in self.norms.iter_mut().enumerate() {
            if i > 0 {
                out.push(&mut temporal.next().expect("one temporal conv per later norm").weight);
            }
            out.push(&mut bn.gamma);
            out.push(&mut bn.beta);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    /// Trainable parameter count (conv + dense + batch-norm affine).
    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// Conv and dense parameters only.
    pub fn layer_param_count(&self) -> usize {
        self.filterbank.param_count()
            + self.temporal.iter().map(TemporalConv::param_count).sum::<usize>()
            + self.head.param_count()
    }

    /// Batch-norm gamma, beta, running mean and running variance.
    pub fn bn_param_count(&self) -> usize {
        self.norms.iter().map(|bn| 4 * bn.channels()).sum()
    }

    /// Rows mirroring the architecture table: input, convolutions, pooling,
    /// fully connected.
    pub fn layer_table(&self) -> Vec<LayerRow> {
        let c = self.config.channels;
        let mut rows = vec![LayerRow {
            index: 0,
            layer: "Input",
            depth: 1,
            height: "h".into(),
            width: self.config.input_bins,
            params: None,
        }];
        rows.push(LayerRow {
            index: 1,
            layer: "Convolution",
            depth: c,
            height: "h".into(),
            width: 1,
            params: Some(self.filterbank.param_count()),
        });
        for conv in &self.temporal {
            rows.push(LayerRow {
                index: rows.len(),
                layer: "Convolution",
                depth: c,
                height: "h".into(),
                width: 1,
                params: Some(conv.param_count()),
            });
        }
        rows.push(LayerRow {
            index: rows.len(),
            layer: "Global Pooling",
            depth: 1,
            height: "1".into(),
            width: c,
            params: None,
        });
        rows.push(LayerRow {
            index: rows.len(),
            layer: "Fully Connected",
            depth: 1,
            height: "1".into(),
            width: self.config.num_classes,
            params: Some(self.head.param_count()),
        });
        rows
    }

    fn check_input(&self, x: &Tensor<T>, mask: &LengthMask) -> Result<()> {
        let (b, h) = match *x.shape() {
            [b, 1, h, w] if w == self.config.input_bins => (b, h),
            _ => {
                return Err(Error::Shape(format!(
                    "network expects (b, 1, h, {}), got {:?}",
                    self.config.input_bins,
                    x.shape()
                )))
            }
        };
        if mask.len() != b {
            return Err(Error::Shape(format!("mask has {} samples, batch has {b}", mask.len())));
        }
        mask.check_height(h)?;
        let minimum = self.config.min_input_frames();
        if let Some((index, &frames)) = mask.valid().iter().enumerate().find(|(_, &v)| v < minimum) {
            return Err(Error::SampleTooShort {
                index,
                frames,
                minimum,
            });
        }
        Ok(())
    }

    /// Logits (no head nonlinearity) plus everything backward needs. Running
    /// statistics are not touched; see [`Network::forward_train`].
    pub fn forward(&self, x: &Tensor<T>, mask: &LengthMask, mode: Mode) -> Result<ForwardPass<T>> {
        self.check_input(x, mask)?;
        let mut masks = vec![mask.clone()];
        let mut caches = Vec::with_capacity(self.norms.len());
        let mut activations: Vec<Tensor<T>> = Vec::with_capacity(self.norms.len());
        let mut stats = Vec::new();

        for (i, bn) in self.norms.iter().enumerate() {
            let z = if i == 0 {
                self.filterbank.forward(x)?
            } else {
                let next = masks[i - 1].propagate(self.config.kernel_time, self.config.stride_time)?;
                masks.push(next);
                self.temporal[i - 1].forward(&activations[i - 1])?
            };
            let (y, cache, batch_stats) = bn.forward(&z, &masks[i], mode)?;
            stats.extend(batch_stats);
            caches.push(cache);
            activations.push(relu_forward(&y));
        }

        let last = activations.last().expect("at least the filterbank stage");
        let pooled = masked_global_mean_pool(last, masks.last().unwrap())?;
        let logits = self.head.forward(&pooled)?;
        Ok(ForwardPass {
            logits,
            trace: Trace {
                input: x.clone(),
                masks,
                norms: caches,
                activations,
                pooled,
            },
            stats,
        })
    }

    /// Train-mode forward that also folds batch statistics into the running
    /// estimates.
    pub fn forward_train(&mut self, x: &Tensor<T>, mask: &LengthMask) -> Result<ForwardPass<T>> {
        let pass = self.forward(x, mask, Mode::Train)?;
        for (bn, stats) in self.norms.iter_mut().zip(&pass.stats) {
            bn.update_running(stats);
        }
        Ok(pass)
    }

    pub fn forward_eval(&self, x: &Tensor<T>, mask: &LengthMask) -> Result<Tensor<T>> {
        Ok(self.forward(x, mask, Mode::Eval)?.logits)
    }

    /// Gradients of the loss with respect to every parameter, in
    /// [`Network::params`] order.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let n = self.norms.len();
        let last = &trace.activations[n - 1];
        let (g_pooled, g_head_w, g_head_b) = self.head.backward(&trace.pooled, grad_logits)?;
        let mut g_act = masked_pool_backward(&g_pooled, &trace.masks[n - 1], last.dim(2))?;

        // per stage: (conv weight grad, gamma grad, beta grad), filled back to front
        let mut stage_grads = Vec::with_capacity(n);
        for i in (0..n).rev() {
            let g_y = relu_backward(&trace.activations[i], &g_act)?;
            let (g_z, g_gamma, g_beta) = self.norms[i].backward(&trace.norms[i], &g_y)?;
            let g_w = if i == 0 {
                self.filterbank.weight_grad(&trace.input, &g_z)?
            } else {
                let (g_prev, g_w) = self.temporal[i - 1].backward(&trace.activations[i - 1], &g_z)?;
                g_act = g_prev;
                g_w
            };
            stage_grads.push((g_w, g_gamma, g_beta));
        }
        stage_grads.reverse();

        let mut grads = Vec::with_capacity(3 * n + 2);
        for (g_w, g_gamma, g_beta) in stage_grads {
            grads.push(g_w);
            grads.push(g_gamma);
            grads.push(g_beta);
        }
        grads.push(g_head_w);
        grads.push(g_head_b);
        Ok(grads)
    }
}

/// Apply the head nonlinearity row-wise: softmax distributions or independent
/// sigmoid posteriors.
pub fn head_probabilities<T: Real>(logits: &Tensor<T>, head: Head) -> Tensor<T> {
    match head {
        Head::Sigmoid => logits.map(|z| T::one() / (T::one() + (-z).exp())),
        Head::Softmax => {
            let k = logits.shape().last().copied().unwrap_or(1);
            let mut out = logits.clone();
            for row in out.data_mut().chunks_exact_mut(k) {
                let m = row.iter().copied().fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    total += *v;
                }
                for v in row.iter_mut() {
                    *v /= total;
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_counts_match_architecture_table() {
        let net = Network::<f32>::build(NetworkConfig::scene(), &mut Rng::new(0)).unwrap();
        let counts: Vec<Option<usize>> = net.layer_table().iter().map(|r| r.params).collect();
        assert_eq!(
            counts,
            vec![None, Some(141_312), Some(196_608), Some(196_608), Some(196_608), None, Some(3_855)]
        );
        let table_sum = 141_312 + 3 * 196_608 + 3_855;
        assert_eq!(table_sum, 734_991);
        assert_eq!(net.layer_param_count(), table_sum);
        assert_eq!(net.bn_param_count(), 4 * 4 * 256);
        assert_eq!(net.param_count(), table_sum + 4 * 2 * 256);
    }

    #[test]
    fn tagging_counts() {
        let net = Network::<f32>::build(NetworkConfig::tagging(), &mut Rng::new(0)).unwrap();
        let conv: usize = net.layer_table()[1..5].iter().filter_map(|r| r.params).sum();
        assert_eq!(conv, 641_280);
        assert_eq!(net.head.param_count(), 1_799);
    }

    #[test]
    fn build_is_deterministic_and_he_scaled() {
        let a = Network::<f32>::build(NetworkConfig::tagging(), &mut Rng::new(5)).unwrap();
        let b = Network::<f32>::build(NetworkConfig::tagging(), &mut Rng::new(5)).unwrap();
        assert_eq!(a, b);
        let w = a.temporal[0].weight.data();
        let var = w.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / (256.0 * 3.0);
        assert!((var - expected).abs() / expected < 0.02, "{var} vs {expected}");
        assert!(a.head.bias.data().iter().all(|&v| v == 0.0));
        assert!(a.norms.iter().all(|bn| bn.gamma.data().iter().all(|&g| g == 1.0)));
    }

    #[test]
    fn too_short_input_is_rejected() {
        let mut cfg = NetworkConfig::new(8, 3, Head::Softmax);
        cfg.channels = 4;
        let net = Network::<f64>::build(cfg, &mut Rng::new(1)).unwrap();
        let x = Tensor::zeros(&[2, 1, 20, 8]).unwrap();
        let mask = LengthMask::new(vec![20, 14]).unwrap();
        assert!(matches!(
            net.forward(&x, &mask, Mode::Train),
            Err(Error::SampleTooShort { index: 1, frames: 14, minimum: 15 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Tensor::from_vec(&[2, 3], vec![1.0f64, 2.0, 3.0, -5.0, 0.0, 700.0]).unwrap();
        let p = head_probabilities(&logits, Head::Softmax);
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
