//! Adversarial, cycle-consistency, identity-mapping and semantic-consistency
//! losses, and their weighted combination.
//!
//! All L1 terms are means over elements, so the weights do not depend on
//! image resolution.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Lower clamp applied to discriminator outputs before taking logs.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_cyc: f64,
    pub lambda_id: f64,
    pub lambda_sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_cyc: 10.0, lambda_id: 0.1, lambda_sem: 0.1 }
    }
}

impl LossWeights {
    pub fn new(lambda_cyc: f64, lambda_id: f64, lambda_sem: f64) -> Result<Self> {
        let w = Self { lambda_cyc, lambda_id, lambda_sem };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_cyc", self.lambda_cyc), ("lambda_id", self.lambda_id), ("lambda_sem", self.lambda_sem)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// How the generator's adversarial term is written.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialForm {
    /// Minimize `−log D(fake)`.
    #[default]
    NonSaturating,
    /// Minimize `log(1 − D(fake))`, the literal min-max generator term.
    Saturating,
}

/// The tensors of one translation `src → dst → src`.
#[derive(Clone, Copy, Debug)]
pub struct TranslationBundle {
    pub x_src: Var,
    /// `Enc_src(x_src)`
    pub z_src: Var,
    /// `Dec_dst(z_src)`
    pub x_fake: Var,
    /// `Enc_dst(x_fake)`
    pub z_back: Var,
    /// `Dec_src(z_back)`
    pub x_rec: Var,
    pub src: usize,
    pub dst: usize,
}

fn check_probabilities(tape: &Tape, d: Var) -> Result<()> {
    if let Some(bad) = tape.value(d).data().iter().find(|&&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidArgument(format!("discriminator output {bad} outside (0, 1)")));
    }
    Ok(())
}

/// `mean log max(p, ε)`.
fn mean_log(tape: &mut Tape, p: Var) -> Result<Var> {
    check_probabilities(tape, p)?;
    let c = tape.clamp_min(p, LOG_EPS)?;
    let l = tape.log(c)?;
    tape.mean(l)
}

/// `mean log max(1 − p, ε)`.
fn mean_log_complement(tape: &mut Tape, p: Var) -> Result<Var> {
    check_probabilities(tape, p)?;
    let q = tape.affine(p, -1.0, 1.0)?;
    let c = tape.clamp_min(q, LOG_EPS)?;
    let l = tape.log(c)?;
    tape.mean(l)
}

/// Discriminator loss `−[log D(real) + log(1 − D(fake))]`, batch-averaged.
/// `d_fake` should come from detached fakes.
pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = mean_log(tape, d_real)?;
    let b = mean_log_complement(tape, d_fake)?;
    let s = tape.add(a, b)?;
    tape.scale(s, -1.0)
}

/// Generator adversarial loss on `D(fake)`.
pub fn generator_loss(tape: &mut Tape, d_fake: Var, form: AdversarialForm) -> Result<Var> {
    match form {
        AdversarialForm::NonSaturating => {
            let l = mean_log(tape, d_fake)?;
            tape.scale(l, -1.0)
        }
        AdversarialForm::Saturating => mean_log_complement(tape, d_fake),
    }
}

/// `(d_loss, g_loss)` from discriminator scores on real target-domain images,
/// on detached fakes and on the live fakes.
pub fn adversarial_losses(
    tape: &mut Tape,
    d_real: Var,
    d_fake_detached: Var,
    d_fake: Var,
    form: AdversarialForm,
) -> Result<(Var, Var)> {
    let d = discriminator_loss(tape, d_real, d_fake_detached)?;
    let g = generator_loss(tape, d_fake, form)?;
    Ok((d, g))
}

/// Value of the min-max objective `E log D(real) + E log(1 − D(fake))`.
pub fn adversarial_objective_value(d_real: &[f64], d_fake: &[f64]) -> f64 {
    let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&p| f(p)).sum::<f64>() / v.len() as f64;
    mean(d_real, &|p| p.max(LOG_EPS).ln()) + mean(d_fake, &|p| (1.0 - p).max(LOG_EPS).ln())
}

/// Mean absolute difference between two equally shaped tensors.
pub fn mean_l1(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::ShapeMismatch {
            op: "mean_l1",
            detail: format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        });
    }
    let n = tape.value(a).len() as f64;
    let d = tape.sub(a, b)?;
    let s = tape.abs_sum(d)?;
    tape.scale(s, 1.0 / n)
}

fn two_way_l1(tape: &mut Tape, a1: Var, b1: Var, a2: Var, b2: Var) -> Result<Var> {
    let first = mean_l1(tape, a1, b1)?;
    let second = mean_l1(tape, a2, b2)?;
    tape.add(first, second)
}

/// Reconstruction error of both directions: `|x_rec − x_src|` forward and backward.
pub fn cycle_loss(tape: &mut Tape, fwd: &TranslationBundle, bwd: &TranslationBundle) -> Result<Var> {
    two_way_l1(tape, fwd.x_rec, fwd.x_src, bwd.x_rec, bwd.x_src)
}

/// Translated image against its own source, both directions.
pub fn identity_mapping_loss(tape: &mut Tape, x_src: Var, x_fake: Var, x_src2: Var, x_fake2: Var) -> Result<Var> {
    two_way_l1(tape, x_fake, x_src, x_fake2, x_src2)
}

/// Latent of the translated image against the latent of its source, both
/// directions.
pub fn semantic_consistency_loss(tape: &mut Tape, z_src: Var, z_back: Var, z_src2: Var, z_back2: Var) -> Result<Var> {
    two_way_l1(tape, z_back, z_src, z_back2, z_src2)
}

/// `adv_fwd + adv_bwd + λ_cyc·cyc + λ_id·idm + λ_sem·sem` on the tape.
pub fn scimgan_objective(
    tape: &mut Tape,
    adv_fwd: Var,
    adv_bwd: Var,
    cyc: Var,
    idm: Var,
    sem: Var,
    weights: &LossWeights,
) -> Result<Var> {
    let adv = tape.add(adv_fwd, adv_bwd)?;
    let c = tape.scale(cyc, weights.lambda_cyc)?;
    let i = tape.scale(idm, weights.lambda_id)?;
    let s = tape.scale(sem, weights.lambda_sem)?;
    let t = tape.add(adv, c)?;
    let t = tape.add(t, i)?;
    tape.add(t, s)
}

/// Scalar form of [`scimgan_objective`], used for bookkeeping.
pub fn scimgan_objective_value(adv_fwd: f64, adv_bwd: f64, cyc: f64, idm: f64, sem: f64, weights: &LossWeights) -> f64 {
    adv_fwd + adv_bwd + weights.lambda_cyc * cyc + weights.lambda_id * idm + weights.lambda_sem * sem
}
