use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batch, sample_crop_length, Batch, Sample, Targets, Task};
use crate::error::{Error, Result};
use crate::metrics::{argmax, eer};
use crate::model::{head_probabilities, Network};
use crate::numerics::{Rng, Tensor};
use crate::objectives::{sigmoid_bce, softmax_xent, weight_decay_grad, LossValue, DEFAULT_WEIGHT_DECAY};

use super::adam::{AdamState, DEFAULT_LR};
use super::schedule::{Action, ScheduleConfig, ScheduleState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub schedule: ScheduleConfig,
    pub seed: u64,
    /// Upper bound for scene-task crops; `None` uses the longest clip in the
    /// batch.
    pub crop_max_frames: Option<usize>,
    /// Writes 0 for per-epoch wall time so logs are reproducible.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 96,
            lr: DEFAULT_LR,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            max_epochs: 100,
            schedule: ScheduleConfig::default(),
            seed: 0,
            crop_max_frames: None,
            deterministic: false,
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Rate used during this epoch.
    pub lr: f64,
    /// Sample-weighted mean data loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
    /// Scene: validation accuracy. Tagging: mean EER over tags with both
    /// classes present.
    pub val_metric: Option<f64>,
    pub seconds: f64,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub model: Network<f32>,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Loss and head probabilities over a sample set, evaluated in eval mode on
/// full segments.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    /// `n x K`, row-major.
    pub probabilities: Vec<f64>,
    pub num_classes: usize,
}

impl Evaluation {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.probabilities[i * self.num_classes..(i + 1) * self.num_classes]
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.probabilities.len() / self.num_classes).map(|i| argmax(self.row(i))).collect()
    }
}

fn data_loss(logits: &Tensor<f32>, targets: &Targets) -> Result<(f64, Tensor<f32>)> {
    match targets {
        Targets::Single(labels) => softmax_xent(logits, labels),
        Targets::Multi(y) => sigmoid_bce(logits, y),
    }
}

/// Train-mode forward and backward on one batch, including weight decay.
/// Updates batch-norm running statistics.
pub fn batch_gradients(net: &mut Network<f32>, batch: &Batch, weight_decay: f64) -> Result<(LossValue, Vec<Tensor<f32>>)> {
    let pass = net.forward_train(&batch.x, &batch.mask)?;
    let (loss, grad_logits) = data_loss(&pass.logits, &batch.targets)?;
    let mut grads = net.backward(&pass.trace, &grad_logits)?;
    let decay = weight_decay_grad(net, &mut grads, weight_decay)?;
    Ok((LossValue::new(loss, decay), grads))
}

pub fn evaluate(net: &Network<f32>, samples: &[Sample], multi_label: bool, batch_size: usize) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to evaluate".into()));
    }
    let k = net.config().num_classes;
    let min = net.config().min_input_frames();
    let mut total = 0.0;
    let mut probabilities = Vec::with_capacity(samples.len() * k);
    let mut rng = Rng::new(0);
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let batch = make_batch(&refs, multi_label, k, None, min, &mut rng)?;
        let logits = net.forward_eval(&batch.x, &batch.mask)?;
        total += data_loss(&logits, &batch.targets)?.0 * chunk.len() as f64;
        let probs = head_probabilities(&logits.cast::<f64>(), net.config().head);
        probabilities.extend_from_slice(probs.data());
    }
    Ok(Evaluation {
        loss: total / samples.len() as f64,
        probabilities,
        num_classes: k,
    })
}

/// Scene: fraction correct. Tagging: mean EER over tags that have both
/// positive and negative samples; `None` if no tag qualifies.
pub fn validation_metric(eval: &Evaluation, samples: &[Sample], multi_label: bool) -> Option<f64> {
    if !multi_label {
        let correct = eval
            .predictions()
            .iter()
            .zip(samples)
            .filter(|(p, s)| s.labels.first() == Some(p))
            .count();
        return Some(correct as f64 / samples.len() as f64);
    }
    let k = eval.num_classes;
    let eers: Vec<f64> = (0..k)
        .filter_map(|tag| {
            let scores: Vec<f64> = (0..samples.len()).map(|i| eval.row(i)[tag]).collect();
            let targets: Vec<bool> = samples.iter().map(|s| s.labels.contains(&tag)).collect();
            eer(&scores, &targets).ok()
        })
        .collect();
    (!eers.is_empty()).then(|| eers.iter().sum::<f64>() / eers.len() as f64)
}

fn stream(epoch: usize, batch: usize) -> u64 {
    ((epoch as u64) << 32) | batch as u64
}

/// Mini-batch Adam with coupled weight decay, plateau halving and early
/// stopping on validation loss. `on_epoch` sees each record, plus the model
/// whenever it is the best so far.
pub fn train(
    mut net: Network<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    task: Task,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&Network<f32>>) -> Result<()>,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::EmptyInput(format!(
            "training needs samples in both splits, got {} train and {} validation",
            train_set.len(),
            val_set.len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::ConfigMismatch("batch_size must be positive".into()));
    }
    let multi = task.multi_label();
    let k = net.config().num_classes;
    let min = net.config().min_input_frames();
    let base = Rng::new(config.seed);
    let mut adam = AdamState::new(net.params().into_iter().map(|p| p.value), config.lr);
    let mut schedule = ScheduleState::new(config.schedule.clone())?;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (net.clone(), 0usize);
    let mut log = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        let lr = adam.lr;
        base.derive(stream(epoch, u32::MAX as usize)).shuffle(&mut order);

        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let mut rng = base.derive(stream(epoch, b));
            let samples: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let crop = (task == Task::Scene).then(|| {
                let longest = samples.iter().map(|s| s.features.frames).max().unwrap_or(min);
                sample_crop_length(&mut rng, min, config.crop_max_frames.unwrap_or(longest))
            });
            let batch = make_batch(&samples, multi, k, crop, min, &mut rng)?;
            let (loss, grads) = batch_gradients(&mut net, &batch, config.weight_decay)?;
            if !loss.total.is_finite() {
                return Err(Error::Divergence(format!("training loss is {} in epoch {epoch}", loss.total)));
            }
            adam.step(net.params_mut(), &grads)?;
            loss_sum += loss.data_loss * idx.len() as f64;
        }

        let eval = evaluate(&net, val_set, multi, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: eval.loss,
            val_metric: validation_metric(&eval, val_set, multi),
            seconds: if config.deterministic { 0.0 } else { started.elapsed().as_secs_f64() },
        };
        let decision = schedule.update(eval.loss, &mut adam.lr)?;
        if decision.new_best {
            best = (net.clone(), epoch);
        }
        on_epoch(&record, decision.new_best.then_some(&best.0))?;
        log.push(record);
        if decision.action == Action::Stop {
            stopped_early = true;
            break;
        }
    }

    Ok(TrainOutcome {
        model: best.0,
        log,
        best_epoch: best.1,
        stopped_early,
    })
}
