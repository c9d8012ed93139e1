//! Translation losses.

mod objectives;

use serde::{Deserialize, Serialize};

pub use objectives::{
    adversarial_losses, adversarial_objective_value, cycle_loss, discriminator_loss, generator_loss,
    identity_mapping_loss, mean_l1, scimgan_objective, scimgan_objective_value, semantic_consistency_loss,
    AdversarialForm, LossWeights, TranslationBundle, LOG_EPS,
};

/// Which pair of images the identity-mapping term compares.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityVariant {
    /// Cross-domain translation against its own source image.
    #[default]
    Literal,
    /// A domain's image passed through its own encoder and decoder.
    SameDomain,
}
