use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::losses::{identification_loss, improved_quartet_loss, quartet_loss_baseline, triplet_loss_baseline, Margins};
use super::sampler::{ImageSample, Quartet, QuartetSampler};
use crate::autodiff::{Tape, Tensor};
use crate::error::{Error, Result};
use crate::nn::{build_reid_backbone, NetworkProfile, ReidBackbone};
use crate::optim::SgdState;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationLoss {
    Triplet,
    Quartet,
    #[default]
    ImprovedQuartet,
}

impl VerificationLoss {
    pub const ALL: [VerificationLoss; 3] = [VerificationLoss::Triplet, VerificationLoss::Quartet, VerificationLoss::ImprovedQuartet];

    pub fn name(self) -> &'static str {
        match self {
            VerificationLoss::Triplet => "triplet",
            VerificationLoss::Quartet => "quartet",
            VerificationLoss::ImprovedQuartet => "improved_quartet",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReidSettings {
    pub margins: Margins,
    pub verification: VerificationLoss,
    pub triplet_margin: f64,
    pub weight_verif: f64,
    pub weight_ident: f64,
    pub lr: f64,
    /// Quartets per step.
    pub batch: usize,
    pub steps: usize,
    pub synth_positive_prob: f64,
    /// Second negative must also differ from the anchor identity.
    pub strict_negatives: bool,
    pub normalize_embeddings: bool,
    pub seed: u64,
}

impl ReidSettings {
    pub fn desk(seed: u64) -> Self {
        Self {
            margins: Margins::default(),
            verification: VerificationLoss::ImprovedQuartet,
            triplet_margin: 1.0,
            weight_verif: 1.0,
            weight_ident: 1.0,
            lr: 0.001,
            batch: 16,
            steps: 500,
            synth_positive_prob: 0.5,
            strict_negatives: true,
            normalize_embeddings: false,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReidLossReport {
    pub verif: f64,
    pub ident: f64,
    pub total: f64,
}

/// Contiguous class indices for the identities present in a training set.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    ids: Vec<u32>,
}

impl LabelMap {
    pub fn from_samples(samples: &[ImageSample]) -> Self {
        let mut ids: Vec<u32> = samples.iter().map(|s| s.identity).collect();
        ids.sort_unstable();
        ids.dedup();
        Self { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn class(&self, identity: u32) -> Result<usize> {
        self.ids
            .binary_search(&identity)
            .map_err(|_| Error::InvalidArgument(format!("identity {identity} has no class")))
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }
}

/// One SGD step on a batch of quartets through the shared four-stream backbone.
pub fn reid_train_step(
    backbone: &mut ReidBackbone,
    samples: &[ImageSample],
    quartets: &[Quartet],
    labels: &LabelMap,
    settings: &ReidSettings,
    optimizer: &mut SgdState,
) -> Result<ReidLossReport> {
    let b = quartets.len();
    if b == 0 {
        return Err(Error::InvalidArgument("empty quartet batch".into()));
    }
    // Stream-major layout: all anchors, then positives, then both negatives.
    let order: Vec<usize> = (0..4)
        .flat_map(|stream| {
            quartets.iter().map(move |q| match stream {
                0 => q.anchor,
                1 => q.positive,
                2 => q.negative1,
                _ => q.negative2,
            })
        })
        .collect();
    let images: Vec<&Tensor> = order.iter().map(|&k| &samples[k].image).collect();
    let targets = order.iter().map(|&k| labels.class(samples[k].identity)).collect::<Result<Vec<_>>>()?;

    let mut tape = Tape::new();
    let net = backbone.network();
    let bound = net.bind(&mut tape, true);
    let x = tape.constant(Tensor::stack(&images)?);
    let out = backbone.forward(&mut tape, &bound, x)?;
    let feats = if settings.normalize_embeddings { tape.l2_normalize_rows(out.features)? } else { out.features };
    let f: Vec<_> = (0..4).map(|s| tape.rows(feats, s * b, (s + 1) * b)).collect::<Result<_>>()?;
    let verif = match settings.verification {
        VerificationLoss::ImprovedQuartet => improved_quartet_loss(&mut tape, f[0], f[1], f[2], f[3], settings.margins)?,
        VerificationLoss::Quartet => quartet_loss_baseline(&mut tape, f[0], f[1], f[2], f[3], settings.margins.tau1)?,
        VerificationLoss::Triplet => triplet_loss_baseline(&mut tape, f[0], f[1], f[2], settings.triplet_margin)?,
    };
    let ident = identification_loss(&mut tape, out.logits, &targets)?;
    let wv = tape.scale(verif, settings.weight_verif)?;
    let wi = tape.scale(ident, settings.weight_ident)?;
    let total = tape.add(wv, wi)?;
    tape.backward(total)?;
    let report = ReidLossReport { verif: tape.scalar(verif), ident: tape.scalar(ident), total: tape.scalar(total) };
    if !report.total.is_finite() {
        return Err(Error::NonFinite { op: "reid_train_step" });
    }
    let grads = net.grads(&tape, &bound);
    drop(tape);
    optimizer.step(backbone.network_mut().params_mut(), &grads, settings.lr)?;
    Ok(report)
}

/// Owns a backbone and its optimizer across steps.
#[derive(Clone, Debug)]
pub struct ReidTrainer {
    pub backbone: ReidBackbone,
    pub optimizer: SgdState,
    pub labels: LabelMap,
    pub settings: ReidSettings,
    pub step: usize,
    pub history: Vec<ReidLossReport>,
}

impl ReidTrainer {
    pub fn new(profile: &NetworkProfile, train: &[ImageSample], settings: ReidSettings) -> Result<Self> {
        let labels = LabelMap::from_samples(train);
        let backbone = build_reid_backbone(profile, labels.len(), &mut Rng::derive(settings.seed, "reid-init", 0))?;
        let optimizer = SgdState::new(backbone.network().params());
        Ok(Self { backbone, optimizer, labels, settings, step: 0, history: Vec::new() })
    }

    /// Runs `settings.steps − step` steps. Each step's quartets come from a
    /// stream keyed on the step index, so a resumed run draws the same batches.
    pub fn train(&mut self, train: &[ImageSample]) -> Result<&[ReidLossReport]> {
        let sampler = QuartetSampler::new(train, self.settings.synth_positive_prob, self.settings.strict_negatives)?;
        while self.step < self.settings.steps {
            let mut rng = Rng::derive(self.settings.seed, "quartets", self.step as u64);
            let batch: Vec<Quartet> = (0..self.settings.batch).map(|_| sampler.sample(train, &mut rng)).collect();
            let r = reid_train_step(&mut self.backbone, train, &batch, &self.labels, &self.settings, &mut self.optimizer)?;
            self.history.push(r);
            self.step += 1;
        }
        Ok(&self.history)
    }
}

/// Mean within-identity and between-identity squared distances of embeddings.
pub fn class_distance_gap(embeddings: &Tensor, ids: &[u32]) -> (f64, f64) {
    let d = embeddings.len() / ids.len();
    let rows: Vec<&[f64]> = embeddings.data().chunks(d).collect();
    let (mut intra, mut inter) = ((0.0, 0usize), (0.0, 0usize));
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let dist: f64 = rows[a].iter().zip(rows[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            let slot = if ids[a] == ids[b] { &mut intra } else { &mut inter };
            slot.0 += dist;
            slot.1 += 1;
        }
    }
    (intra.0 / intra.1.max(1) as f64, inter.0 / inter.1.max(1) as f64)
}

/// Per-identity sample groups, handy for splitting and reporting.
pub fn group_by_identity(samples: &[ImageSample]) -> BTreeMap<u32, Vec<usize>> {
    let mut m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (k, s) in samples.iter().enumerate() {
        m.entry(s.identity).or_default().push(k);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(ids: u32, per: usize, seed: u64) -> Vec<ImageSample> {
        let mut rng = Rng::new(seed);
        let mut v = Vec::new();
        for id in 0..ids {
            let base: Vec<f64> = (0..768).map(|_| rng.uniform_range(-0.8, 0.8)).collect();
            for _ in 0..per {
                let data = base.iter().map(|b| (b + 0.1 * rng.normal()).clamp(-1.0, 1.0)).collect();
                v.push(ImageSample {
                    image: Tensor::new(vec![3, 16, 16], data).unwrap(),
                    identity: id,
                    domain: 0,
                    camera: 0,
                    is_synthetic: false,
                });
            }
        }
        v
    }

    #[test]
    fn zero_verification_weight_gives_pure_identification() {
        let data = toy(4, 2, 1);
        let p = NetworkProfile::desk();
        let mut s = ReidSettings::desk(1);
        s.batch = 4;
        let labels = LabelMap::from_samples(&data);
        let sampler = QuartetSampler::new(&data, 0.0, true).unwrap();
        let mut rng = Rng::new(5);
        let qs: Vec<Quartet> = (0..4).map(|_| sampler.sample(&data, &mut rng)).collect();

        // Gradient of the step with weight_verif = 0 equals that of the identification loss alone.
        let base = ReidTrainer::new(&p, &data, s.clone()).unwrap();
        let mut a = base.clone();
        s.weight_verif = 0.0;
        let r = reid_train_step(&mut a.backbone, &data, &qs, &labels, &s, &mut a.optimizer).unwrap();
        assert_eq!(r.total, r.ident);
        let mut b = base.clone();
        s.verification = VerificationLoss::Triplet;
        reid_train_step(&mut b.backbone, &data, &qs, &labels, &s, &mut b.optimizer).unwrap();
        assert_eq!(a.backbone.network().params(), b.backbone.network().params());
    }

    #[test]
    fn total_recomposes_and_training_is_deterministic() {
        let data = toy(5, 3, 2);
        let mut s = ReidSettings::desk(3);
        s.steps = 3;
        s.batch = 4;
        let p = NetworkProfile::desk();
        let mut a = ReidTrainer::new(&p, &data, s.clone()).unwrap();
        let mut b = ReidTrainer::new(&p, &data, s).unwrap();
        a.train(&data).unwrap();
        b.train(&data).unwrap();
        for r in &a.history {
            assert!((r.total - (r.verif + r.ident)).abs() <= 1e-12);
        }
        assert_eq!(a.history, b.history);
        assert_eq!(a.backbone.network().params(), b.backbone.network().params());
    }

    #[test]
    fn distance_gap_on_hand_made_embeddings() {
        let e = Tensor::new(vec![4, 1], vec![0.0, 1.0, 10.0, 11.0]).unwrap();
        let (intra, inter) = class_distance_gap(&e, &[0, 0, 1, 1]);
        assert_eq!(intra, 1.0);
        assert_eq!(inter, (100.0 + 121.0 + 81.0 + 100.0) / 4.0);
    }
}
