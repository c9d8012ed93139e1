//! Four-stream re-identification: losses, quartet sampling and training.

mod losses;
mod sampler;
mod train;

pub use losses::{identification_loss, improved_quartet_loss, quartet_loss_baseline, triplet_loss_baseline, Margins};
pub use sampler::{sample_quartet, ImageSample, Quartet, QuartetSampler};
pub use train::{
    class_distance_gap, group_by_identity, reid_train_step, LabelMap, ReidLossReport, ReidSettings, ReidTrainer,
    VerificationLoss,
};
