//! Adam, the plateau schedule and the epoch loop.

mod adam;
mod schedule;
mod train;

pub use adam::{AdamState, DEFAULT_LR};
pub use schedule::{Action, Decision, ScheduleConfig, ScheduleState};
pub use train::{
    batch_gradients, evaluate, train, validation_metric, EpochRecord, Evaluation, TrainConfig,
    TrainOutcome,
};
