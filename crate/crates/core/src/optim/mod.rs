//! Adam, staircase learning-rate schedules and the joint training loop.

pub mod adam;
pub mod schedule;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use schedule::{lr_at, Schedule};
pub use train::{initial_cameras, train, CheckpointPolicy, MetricsLog, MetricsRow, PoseInit, TrainConfig, TrainOutput, Trainer, METRICS_HEADER};
