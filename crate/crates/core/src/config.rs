//! Run configuration: one flat record, read from `key = value` lines or a
//! JSON object.

use serde::{Deserialize, Serialize};

use crate::data::CorpusConfig;
use crate::error::{Error, Result};
use crate::eval::{ExperimentSetup, Protocol};
use crate::gan::{AdversarialForm, IdentityVariant, LossWeights};
use crate::nn::{NetworkProfile, ProfileName};
use crate::orchestrator::{GanSettings, LrSchedule};
use crate::reid::{Margins, ReidSettings, VerificationLoss};

/// A named built-in topology or a complete inline one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProfileChoice {
    Named(ProfileName),
    Custom(Box<NetworkProfile>),
}

impl ProfileChoice {
    pub fn resolve(&self) -> Result<NetworkProfile> {
        let p = match self {
            ProfileChoice::Named(ProfileName::Desk) => NetworkProfile::desk(),
            ProfileChoice::Named(ProfileName::Full) => NetworkProfile::full(),
            ProfileChoice::Named(ProfileName::Custom) => {
                return Err(Error::Config("profile \"custom\" needs an inline topology object".into()))
            }
            ProfileChoice::Custom(p) => (**p).clone(),
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_sem: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lr_gan: f64,
    pub gan_epochs: usize,
    /// First epoch of the linear decay.
    pub gan_decay_start: usize,
    pub gan_batch: usize,
    pub lr_reid: f64,
    pub reid_batch: usize,
    pub reid_steps: usize,
    pub seed: u64,
    pub profile: ProfileChoice,
    pub identity_variant: IdentityVariant,
    pub adversarial_form: AdversarialForm,
    pub shuffle_pairs: bool,
    pub verification_loss: VerificationLoss,
    pub weight_verif: f64,
    pub weight_ident: f64,
    pub synth_positive_prob: f64,
    pub triplet_margin: f64,
    pub strict_negatives: bool,
    pub normalize_embeddings: bool,
    pub n_domains: usize,
    pub n_identities: usize,
    pub images_per_id_per_domain: usize,
    pub cameras: u16,
    pub noise_sigma: f64,
    pub camera_strength: f64,
    pub min_identity_separation: f64,
    /// Smallest photometric difference between any two domain styles.
    pub min_style_delta: f64,
    /// Identities held out for evaluation.
    pub test_identities: usize,
    pub protocol: ProtocolKind,
    /// Evaluated domain: the training domain within a domain, the held-out
    /// one across domains.
    pub eval_domain: u16,
    pub max_rank: usize,
    /// Re-identification restarts averaged per ablation cell.
    pub reid_repeats: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    #[default]
    WithinDomain,
    CrossDomain,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        Self {
            lambda_cyc: 10.0,
            lambda_id: 0.1,
            lambda_sem: 0.1,
            tau1: -1.0,
            tau2: 0.01,
            lr_gan: 0.0002,
            gan_epochs: 200,
            gan_decay_start: 100,
            gan_batch: 1,
            lr_reid: 0.001,
            reid_batch: 128,
            reid_steps: 500,
            seed: 0,
            profile: ProfileChoice::Named(ProfileName::Desk),
            identity_variant: IdentityVariant::Literal,
            adversarial_form: AdversarialForm::NonSaturating,
            shuffle_pairs: false,
            verification_loss: VerificationLoss::ImprovedQuartet,
            weight_verif: 1.0,
            weight_ident: 1.0,
            synth_positive_prob: 0.5,
            triplet_margin: 1.0,
            strict_negatives: true,
            normalize_embeddings: false,
            n_domains: corpus.n_domains,
            n_identities: corpus.n_identities,
            images_per_id_per_domain: corpus.images_per_id_per_domain,
            cameras: corpus.cameras,
            noise_sigma: corpus.noise_sigma,
            camera_strength: corpus.camera_strength,
            min_identity_separation: corpus.min_identity_separation,
            min_style_delta: corpus.min_style_delta,
            test_identities: 5,
            protocol: ProtocolKind::WithinDomain,
            eval_domain: 0,
            max_rank: 10,
            reid_repeats: 1,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be > 0, got {v}")))
    }
}

fn non_negative(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be >= 0, got {v}")))
    }
}

impl TrainConfig {
    /// Short schedule for minutes-long runs: 20 epochs, batch 4, Re-ID batch 16.
    pub fn desk() -> Self {
        Self { gan_epochs: 20, gan_decay_start: 10, gan_batch: 4, reid_batch: 16, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        non_negative("lambda_cyc", self.lambda_cyc)?;
        non_negative("lambda_id", self.lambda_id)?;
        non_negative("lambda_sem", self.lambda_sem)?;
        non_negative("weight_verif", self.weight_verif)?;
        non_negative("weight_ident", self.weight_ident)?;
        non_negative("noise_sigma", self.noise_sigma)?;
        non_negative("camera_strength", self.camera_strength)?;
        non_negative("min_identity_separation", self.min_identity_separation)?;
        non_negative("min_style_delta", self.min_style_delta)?;
        positive("lr_gan", self.lr_gan)?;
        positive("lr_reid", self.lr_reid)?;
        positive("triplet_margin", self.triplet_margin)?;
        if !(self.tau1.is_finite() && self.tau2.is_finite()) {
            return Err(Error::Config("tau1 and tau2 must be finite".into()));
        }
        if self.gan_epochs < 1 {
            return Err(Error::Config("gan_epochs must be >= 1".into()));
        }
        if self.gan_decay_start > self.gan_epochs {
            return Err(Error::Config(format!(
                "gan_decay_start {} exceeds gan_epochs {}",
                self.gan_decay_start, self.gan_epochs
            )));
        }
        for (name, v) in [("gan_batch", self.gan_batch), ("reid_batch", self.reid_batch), ("reid_steps", self.reid_steps)] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.synth_positive_prob) {
            return Err(Error::Config(format!("synth_positive_prob {} outside [0, 1]", self.synth_positive_prob)));
        }
        if self.test_identities < 1 || self.test_identities + 3 > self.n_identities {
            return Err(Error::Config(format!(
                "test_identities {} leaves fewer than 3 of {} identities for training",
                self.test_identities, self.n_identities
            )));
        }
        if self.eval_domain as usize >= self.n_domains {
            return Err(Error::Config(format!("eval_domain {} outside {} domains", self.eval_domain, self.n_domains)));
        }
        if self.max_rank < 1 || self.reid_repeats < 1 {
            return Err(Error::Config("max_rank and reid_repeats must be >= 1".into()));
        }
        if self.cameras < 2 {
            return Err(Error::Config("evaluation needs at least 2 cameras".into()));
        }
        self.profile.resolve().map_err(|e| Error::Config(format!("profile: {e}")))?;
        self.corpus_config()?.validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn network_profile(&self) -> Result<NetworkProfile> {
        self.profile.resolve()
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights { lambda_cyc: self.lambda_cyc, lambda_id: self.lambda_id, lambda_sem: self.lambda_sem }
    }

    pub fn gan_settings(&self) -> GanSettings {
        GanSettings {
            weights: self.loss_weights(),
            form: self.adversarial_form,
            identity_variant: self.identity_variant,
            lr: LrSchedule {
                base_lr: self.lr_gan,
                constant_epochs: self.gan_decay_start,
                decay_epochs: self.gan_epochs - self.gan_decay_start,
            },
            batch: self.gan_batch,
            shuffle_pairs: self.shuffle_pairs,
            seed: self.seed,
        }
    }

    pub fn reid_settings(&self) -> ReidSettings {
        ReidSettings {
            margins: Margins { tau1: self.tau1, tau2: self.tau2 },
            verification: self.verification_loss,
            triplet_margin: self.triplet_margin,
            weight_verif: self.weight_verif,
            weight_ident: self.weight_ident,
            lr: self.lr_reid,
            batch: self.reid_batch,
            steps: self.reid_steps,
            synth_positive_prob: self.synth_positive_prob,
            strict_negatives: self.strict_negatives,
            normalize_embeddings: self.normalize_embeddings,
            seed: self.seed,
        }
    }

    /// Corpus whose image shape follows the network profile.
    pub fn corpus_config(&self) -> Result<CorpusConfig> {
        Ok(CorpusConfig {
            n_identities: self.n_identities,
            n_domains: self.n_domains,
            images_per_id_per_domain: self.images_per_id_per_domain,
            cameras: self.cameras,
            image: self.network_profile()?.image,
            noise_sigma: self.noise_sigma,
            camera_strength: self.camera_strength,
            min_identity_separation: self.min_identity_separation,
            min_style_delta: self.min_style_delta,
            seed: self.seed,
            ..CorpusConfig::default()
        })
    }

    pub fn protocol(&self) -> Protocol {
        match self.protocol {
            ProtocolKind::WithinDomain => Protocol::WithinDomain { domain: self.eval_domain },
            ProtocolKind::CrossDomain => Protocol::CrossDomain { held_out: self.eval_domain },
        }
    }

    /// The experiment this config describes, for the ablation runner.
    pub fn experiment_setup(&self) -> Result<ExperimentSetup> {
        Ok(ExperimentSetup {
            profile: self.network_profile()?,
            corpus: self.corpus_config()?,
            gan: self.gan_settings(),
            reid: self.reid_settings(),
            protocol: self.protocol(),
            test_identities: self.test_identities,
            max_rank: self.max_rank,
            reid_repeats: self.reid_repeats,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// One `key = value` line per field, values in JSON notation.
    pub fn to_key_values(&self) -> String {
        let serde_json::Value::Object(map) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Accepts a JSON object or `key = value` lines (`#` starts a comment).
/// Values are read as JSON when they parse as JSON, otherwise as bare strings.
/// Unknown keys, type mismatches and out-of-range values are errors.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let trimmed = text.trim_start();
    let value = if trimmed.starts_with('{') {
        serde_json::from_str::<serde_json::Value>(text).map_err(|e| Error::Config(format!("JSON config: {e}")))?
    } else {
        let mut map = serde_json::Map::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1)))?;
            let (key, val) = (key.trim(), val.trim());
            let parsed = serde_json::from_str(val).unwrap_or_else(|_| serde_json::Value::String(val.to_string()));
            if map.insert(key.to_string(), parsed).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key {key}", n + 1)));
            }
        }
        serde_json::Value::Object(map)
    };
    let config: TrainConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_input_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!((c.lambda_cyc, c.lambda_id, c.lambda_sem), (10.0, 0.1, 0.1));
        assert_eq!((c.tau1, c.tau2), (-1.0, 0.01));
        assert_eq!((c.lr_gan, c.gan_epochs, c.gan_decay_start, c.gan_batch), (0.0002, 200, 100, 1));
        assert_eq!((c.lr_reid, c.reid_batch), (0.001, 128));
        assert_eq!(parse_config("{}").unwrap(), c);
        assert_eq!(parse_config("# nothing\n\n").unwrap(), c);
    }

    #[test]
    fn range_and_key_errors() {
        for bad in [
            "lambda_cyc = -1",
            "lr_gan = 0",
            "gan_epochs = 0",
            "gan_decay_start = 300",
            "synth_positive_prob = 2",
            "lamda_cyc = 1",
            "gan_epochs = \"many\"",
            "gan_epochs = 1.5",
            "profile = tiny",
            "profile = custom",
            "seed = 1\nseed = 2",
            "just words",
            "{\"tau9\": 1}",
        ] {
            assert!(matches!(parse_config(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn both_syntaxes_agree() {
        let kv = "lambda_cyc = 5\nprofile = full # comment\nidentity_variant = same_domain\nseed = 18446744073709551615\n";
        let json = r#"{"lambda_cyc": 5.0, "profile": "full", "identity_variant": "same_domain", "seed": 18446744073709551615}"#;
        let a = parse_config(kv).unwrap();
        assert_eq!(a, parse_config(json).unwrap());
        assert_eq!(a.network_profile().unwrap(), NetworkProfile::full());
        assert_eq!(a.seed, u64::MAX);
    }

    #[test]
    fn inline_profile_is_accepted() {
        let mut p = NetworkProfile::desk();
        p.name = ProfileName::Custom;
        p.residual_blocks = 3;
        let c = TrainConfig { profile: ProfileChoice::Custom(Box::new(p.clone())), ..TrainConfig::desk() };
        let back = parse_config(&c.to_key_values()).unwrap();
        assert_eq!(back.network_profile().unwrap(), p);
    }

    #[test]
    fn settings_follow_fields() {
        let c = TrainConfig::desk();
        let g = c.gan_settings();
        assert_eq!((g.lr.constant_epochs, g.lr.decay_epochs, g.batch), (10, 10, 4));
        assert_eq!(g.lr.lr(20), 0.0);
        let paper = TrainConfig::default().gan_settings().lr;
        assert_eq!((paper.lr(99), paper.lr(100), paper.lr(200)), (0.0002, 0.0002, 0.0));
        assert_eq!(c.reid_settings().batch, 16);
        assert_eq!(c.corpus_config().unwrap(), CorpusConfig::default());
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(
            lambda in 0.0f64..100.0,
            tau1 in -5.0f64..5.0,
            lr in 1e-6f64..1.0,
            epochs in 1usize..400,
            frac in 0.0f64..=1.0,
            seed in any::<u64>(),
            p in 0.0f64..=1.0,
            form in prop::bool::ANY,
        ) {
            let c = TrainConfig {
                lambda_cyc: lambda,
                tau1,
                lr_gan: lr,
                gan_epochs: epochs,
                gan_decay_start: (epochs as f64 * frac) as usize,
                seed,
                synth_positive_prob: p,
                adversarial_form: if form { AdversarialForm::Saturating } else { AdversarialForm::NonSaturating },
                ..TrainConfig::default()
            };
            prop_assert_eq!(&parse_config(&c.to_key_values()).unwrap(), &c);
            prop_assert_eq!(&parse_config(&c.to_json()).unwrap(), &c);
        }
    }
}
