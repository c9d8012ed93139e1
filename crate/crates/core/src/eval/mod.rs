//! Embedding extraction, CMC ranking, and the experiment protocols.

mod ablation;
mod cmc;
mod embed;

pub use ablation::{
    run_ablation, run_ablation_with, AblationConfig, AblationReport, CellResult, DirectionResult, ExperimentData, ExperimentSetup,
    GanVariant, Protocol, restart_seed,
};
pub use cmc::{cmc, cmc_oracle, match_positions, squared_distance, CmcCurve};
pub use embed::{cross_domain_eval, evaluate_split, extract_embeddings, normalize_rows, thread_count, CrossDomainReport};
