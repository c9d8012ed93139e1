//! Domain registry, pair schedule, learning-rate schedule and the pairwise
//! translation trainer.

mod registry;
mod schedule;
mod trainer;

pub use registry::{DomainComponentSet, Registry};
pub use schedule::{pair_count, LrSchedule, Method, PairSchedule};
pub use trainer::{
    train_pair_step, Cursor, DomainOptimizers, EpochRecord, GanSettings, GanTrainer, LossReport, PairRecord, Partial,
    TrainerState,
};

#[cfg(test)]
mod tests;
