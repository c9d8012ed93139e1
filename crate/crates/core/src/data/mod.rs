//! Synthetic multi-domain people, splits, and the portable dataset file.

mod corpus;
mod format;
mod render;

pub use corpus::{augment_with_translations, generate_corpus, group_by_domain, make_splits, split_domains, Corpus, CorpusConfig, DatasetSplit, SplitPolicy};
pub use format::{decode_dataset, encode_dataset, load_dataset, save_dataset, DATASET_MAGIC, DATASET_VERSION};
pub use render::{
    domain_styles, identity_templates, render_sample, render_with_pose, CameraShift, DomainStyle,
    IdentityTemplate, Pose, Primitive, PrimitiveKind,
};
