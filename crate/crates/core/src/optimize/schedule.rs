use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    /// An epoch improves when `metric < best - min_delta`.
    pub min_delta: f64,
    /// Non-improving epochs before the learning rate is halved.
    pub patience_lr: usize,
    /// Non-improving epochs before training stops.
    pub patience_stop: usize,
    pub lr_floor: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            min_delta: 1e-4,
            patience_lr: 5,
            patience_stop: 15,
            lr_floor: 1e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Continue,
    HalveLr,
    Stop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Decision {
    pub action: Action,
    /// The metric is the lowest seen so far (no `min_delta` margin); the
    /// caller snapshots the model.
    pub new_best: bool,
}

/// Plateau learning-rate halving and early stopping on validation loss.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleState {
    pub config: ScheduleConfig,
    best_metric: f64,
    best_seen: f64,
    since_improve: usize,
    since_lr: usize,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        if config.patience_lr == 0 || config.patience_lr >= config.patience_stop {
            return Err(Error::ConfigMismatch(format!(
                "need 0 < patience_lr < patience_stop, got {} and {}",
                config.patience_lr, config.patience_stop
            )));
        }
        Ok(Self {
            config,
            best_metric: f64::INFINITY,
            best_seen: f64::INFINITY,
            since_improve: 0,
            since_lr: 0,
        })
    }

    pub fn best_metric(&self) -> f64 {
        self.best_seen
    }

    pub fn epochs_since_improve(&self) -> usize {
        self.since_improve
    }

    /// Feeds one epoch's validation metric. On `HalveLr`, `lr` has already
    /// been halved (never below the floor).
    pub fn update(&mut self, metric: f64, lr: &mut f64) -> Result<Decision> {
        if metric.is_nan() {
            return Err(Error::Divergence("validation loss is NaN".into()));
        }
        let new_best = metric < self.best_seen;
        if new_best {
            self.best_seen = metric;
        }
        if metric < self.best_metric - self.config.min_delta {
            self.best_metric = metric;
            self.since_improve = 0;
            self.since_lr = 0;
            return Ok(Decision {
                action: Action::Continue,
                new_best,
            });
        }
        self.since_improve += 1;
        self.since_lr += 1;
        let action = if self.since_improve >= self.config.patience_stop {
            Action::Stop
        } else if self.since_lr >= self.config.patience_lr {
            self.since_lr = 0;
            *lr = (*lr / 2.0).max(self.config.lr_floor);
            Action::HalveLr
        } else {
            Action::Continue
        };
        Ok(Decision { action, new_best })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(metrics: &[f64]) -> (Vec<Action>, Vec<f64>) {
        let mut s = ScheduleState::new(ScheduleConfig::default()).unwrap();
        let mut lr = 1e-3;
        let mut actions = Vec::new();
        let mut lrs = Vec::new();
        for &m in metrics {
            actions.push(s.update(m, &mut lr).unwrap().action);
            lrs.push(lr);
        }
        (actions, lrs)
    }

    #[test]
    fn strict_improvement_continues() {
        let (a, _) = run(&[1.0, 0.9, 0.8]);
        assert_eq!(a, vec![Action::Continue; 3]);
    }

    #[test]
    fn halves_after_five_flat_epochs() {
        let (a, lrs) = run(&[0.8; 6]);
        assert_eq!(a[..5], [Action::Continue; 5]);
        assert_eq!(a[5], Action::HalveLr);
        assert_eq!(lrs[5], 0.0005);
    }

    #[test]
    fn stops_after_fifteen_flat_epochs() {
        let (a, lrs) = run(&[0.8; 16]);
        assert_eq!(a[15], Action::Stop);
        assert_eq!(a.iter().filter(|&&x| x == Action::HalveLr).count(), 2);
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn lr_never_drops_below_floor() {
        let cfg = ScheduleConfig {
            patience_lr: 1,
            patience_stop: 100,
            ..ScheduleConfig::default()
        };
        let mut s = ScheduleState::new(cfg).unwrap();
        let mut lr = 1e-3;
        for _ in 0..50 {
            s.update(1.0, &mut lr).unwrap();
        }
        assert_eq!(lr, 1e-5);
    }

    #[test]
    fn tiny_gains_are_new_bests_but_not_improvements() {
        let mut s = ScheduleState::new(ScheduleConfig::default()).unwrap();
        let mut lr = 1e-3;
        s.update(1.0, &mut lr).unwrap();
        let d = s.update(1.0 - 1e-6, &mut lr).unwrap();
        assert!(d.new_best);
        assert_eq!(s.epochs_since_improve(), 1);
    }

    #[test]
    fn nan_and_bad_config() {
        let mut s = ScheduleState::new(ScheduleConfig::default()).unwrap();
        assert!(matches!(s.update(f64::NAN, &mut 1.0), Err(Error::Divergence(_))));
        let bad = ScheduleConfig {
            patience_lr: 15,
            ..ScheduleConfig::default()
        };
        assert!(ScheduleState::new(bad).is_err());
    }
}
