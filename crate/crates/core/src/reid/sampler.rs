use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// One labeled image.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSample {
    /// `(C, H, W)` in `[-1, 1]`.
    pub image: Tensor,
    pub identity: u32,
    pub domain: u16,
    pub camera: u16,
    /// Produced by translation; carries its source image's identity.
    pub is_synthetic: bool,
}

/// Indices into a sample list: anchor, positive, first and second negative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quartet {
    pub anchor: usize,
    pub positive: usize,
    pub negative1: usize,
    pub negative2: usize,
}

impl Quartet {
    /// Checks the identity constraints against `samples`.
    pub fn validate(&self, samples: &[ImageSample], strict: bool) -> Result<()> {
        let id = |k: usize| samples.get(k).map(|s| s.identity).ok_or_else(|| Error::InvalidArgument(format!("sample {k} out of range")));
        let (a, p, n1, n2) = (id(self.anchor)?, id(self.positive)?, id(self.negative1)?, id(self.negative2)?);
        let fail = |why: &str| Err(Error::InvalidArgument(format!("invalid quartet {self:?}: {why}")));
        if self.anchor == self.positive {
            return fail("anchor and positive are the same sample");
        }
        if a != p {
            return fail("positive identity differs from anchor");
        }
        if n1 == a {
            return fail("first negative shares the anchor identity");
        }
        if n2 == n1 {
            return fail("negatives share an identity");
        }
        if strict && n2 == a {
            return fail("second negative shares the anchor identity");
        }
        Ok(())
    }
}

/// Draws quartets from a fixed sample list.
///
/// Anchors and negatives are real images; positives are synthetic with
/// probability `synth_positive_prob` whenever the anchor's identity has a
/// synthetic image, and otherwise a different real image of that identity.
#[derive(Clone, Debug)]
pub struct QuartetSampler {
    real: BTreeMap<u32, Vec<usize>>,
    synthetic: BTreeMap<u32, Vec<usize>>,
    real_indices: Vec<usize>,
    anchors: Vec<usize>,
    synth_positive_prob: f64,
    strict: bool,
}

impl QuartetSampler {
    pub fn new(samples: &[ImageSample], synth_positive_prob: f64, strict: bool) -> Result<Self> {
        if !(0.0..=1.0).contains(&synth_positive_prob) {
            return Err(Error::InvalidArgument(format!("synth_positive_prob {synth_positive_prob} outside [0, 1]")));
        }
        let mut real: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut synthetic: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (k, s) in samples.iter().enumerate() {
            let slot = if s.is_synthetic { &mut synthetic } else { &mut real };
            slot.entry(s.identity).or_default().push(k);
        }
        let min_ids = if strict { 3 } else { 2 };
        if real.len() < min_ids {
            return Err(Error::Dataset(format!("quartets need at least {min_ids} identities, found {}", real.len())));
        }
        let real_indices: Vec<usize> = real.values().flatten().copied().collect();
        let anchors: Vec<usize> = real
            .iter()
            .filter(|(id, v)| v.len() >= 2 || synthetic.contains_key(id))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        if anchors.is_empty() {
            return Err(Error::Dataset("no identity has two or more samples".into()));
        }
        Ok(Self { real, synthetic, real_indices, anchors, synth_positive_prob, strict })
    }

    fn negative(&self, samples: &[ImageSample], rng: &mut Rng, exclude: &[u32]) -> usize {
        loop {
            let k = self.real_indices[rng.below(self.real_indices.len())];
            if !exclude.contains(&samples[k].identity) {
                return k;
            }
        }
    }

    pub fn sample(&self, samples: &[ImageSample], rng: &mut Rng) -> Quartet {
        let anchor = self.anchors[rng.below(self.anchors.len())];
        let id = samples[anchor].identity;
        let reals = &self.real[&id];
        let synth = self.synthetic.get(&id);
        let use_synth = match synth {
            Some(_) if reals.len() < 2 => true,
            Some(_) => rng.bernoulli(self.synth_positive_prob),
            None => false,
        };
        let positive = if use_synth {
            let s = synth.expect("checked above");
            s[rng.below(s.len())]
        } else {
            // A uniform pick among the other real images of the identity.
            let others: Vec<usize> = reals.iter().copied().filter(|&k| k != anchor).collect();
            others[rng.below(others.len())]
        };
        let negative1 = self.negative(samples, rng, &[id]);
        let n1 = samples[negative1].identity;
        let negative2 = if self.strict {
            self.negative(samples, rng, &[id, n1])
        } else {
            self.negative(samples, rng, &[n1])
        };
        Quartet { anchor, positive, negative1, negative2 }
    }
}

/// Convenience wrapper building a sampler for a single draw.
pub fn sample_quartet(samples: &[ImageSample], rng: &mut Rng, synth_positive_prob: f64) -> Result<Quartet> {
    Ok(QuartetSampler::new(samples, synth_positive_prob, true)?.sample(samples, rng))
}
