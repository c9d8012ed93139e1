use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Translation model family whose generator/discriminator count is compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// One shared-latent encoder/decoder/discriminator per domain.
    Scimgan,
    /// One dedicated generator and discriminator per ordered domain pair.
    Cyclegan,
}

/// Number of generator/discriminator pairs needed for `n` domains.
pub fn pair_count(n_domains: usize, method: Method) -> Result<usize> {
    if n_domains < 2 {
        return Err(Error::InvalidArgument(format!("need at least two domains, got {n_domains}")));
    }
    Ok(match method {
        Method::Scimgan => n_domains,
        Method::Cyclegan => n_domains * (n_domains - 1),
    })
}

/// Unordered domain pairs visited once per epoch.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairSchedule {
    pairs: Vec<(usize, usize)>,
}

impl PairSchedule {
    /// All pairs `i < j` in lexicographic order.
    pub fn lexicographic(n_domains: usize) -> Result<Self> {
        if n_domains < 2 {
            return Err(Error::InvalidArgument(format!("need at least two domains, got {n_domains}")));
        }
        let pairs = (0..n_domains)
            .flat_map(|i| (i + 1..n_domains).map(move |j| (i, j)))
            .collect();
        Ok(Self { pairs })
    }

    /// The lexicographic pairs permuted by a stream keyed on `(seed, epoch)`.
    pub fn shuffled(n_domains: usize, seed: u64, epoch: usize) -> Result<Self> {
        let mut s = Self::lexicographic(n_domains)?;
        Rng::derive(seed, "pair-order", epoch as u64).shuffle(&mut s.pairs);
        Ok(s)
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Constant learning rate, then a linear ramp to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub constant_epochs: usize,
    pub decay_epochs: usize,
}

impl LrSchedule {
    pub fn new(base_lr: f64, constant_epochs: usize, decay_epochs: usize) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {base_lr}")));
        }
        Ok(Self { base_lr, constant_epochs, decay_epochs })
    }

    pub fn total_epochs(&self) -> usize {
        self.constant_epochs + self.decay_epochs
    }

    /// Rate used throughout epoch `epoch` (0-based), evaluated at its start.
    pub fn lr(&self, epoch: usize) -> f64 {
        if epoch < self.constant_epochs {
            return self.base_lr;
        }
        if epoch >= self.total_epochs() {
            return 0.0;
        }
        let left = (self.total_epochs() - epoch) as f64;
        self.base_lr * left / self.decay_epochs as f64
    }
}
