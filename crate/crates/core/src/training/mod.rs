//! Pair enumeration, the SGD loop and its learning-rate schedule.

mod pairs;
mod schedule;
mod trainer;

pub use pairs::{enumerate_pairs, PairSample};
pub use schedule::{PlateauSchedule, ScheduleStep};
pub use trainer::{evaluate_dev_loss, train, write_epoch_log, EpochReport, Sample, TrainConfig, TrainOutcome};
