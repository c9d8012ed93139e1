//! Metric-learning and identification losses over batched embeddings.
//!
//! Every function takes `(B, D)` embeddings (one row per quartet or triplet)
//! and returns the batch mean as a scalar.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Margins {
    pub tau1: f64,
    pub tau2: f64,
}

impl Default for Margins {
    fn default() -> Self {
        Self { tau1: -1.0, tau2: 0.01 }
    }
}

/// `2·d(f1,f2) − d(f1,f3) − d(f4,f3)` per row, the relative term before its hinge.
fn quartet_argument(tape: &mut Tape, f1: Var, f2: Var, f3: Var, f4: Var) -> Result<(Var, Var)> {
    let d12 = tape.squared_l2_distance(f1, f2)?;
    let d13 = tape.squared_l2_distance(f1, f3)?;
    let d43 = tape.squared_l2_distance(f4, f3)?;
    let a = tape.sub(d12, d13)?;
    let a = tape.add(a, d12)?;
    let a = tape.sub(a, d43)?;
    Ok((a, d12))
}

/// `mean(max{2·d12 − d13 − d43, τ1} + max{d12, τ2})` with squared Euclidean `d`.
pub fn improved_quartet_loss(tape: &mut Tape, f1: Var, f2: Var, f3: Var, f4: Var, margins: Margins) -> Result<Var> {
    let (arg, d12) = quartet_argument(tape, f1, f2, f3, f4)?;
    let t1 = tape.clamp_min(arg, margins.tau1)?;
    let t2 = tape.clamp_min(d12, margins.tau2)?;
    let s = tape.add(t1, t2)?;
    tape.mean(s)
}

/// The relative term alone: `mean(max{2·d12 − d13 − d43, τ1})`.
pub fn quartet_loss_baseline(tape: &mut Tape, f1: Var, f2: Var, f3: Var, f4: Var, tau1: f64) -> Result<Var> {
    let (arg, _) = quartet_argument(tape, f1, f2, f3, f4)?;
    let t1 = tape.clamp_min(arg, tau1)?;
    tape.mean(t1)
}

/// `mean(max{d(f1,f2) − d(f1,f3) + margin, 0})`.
pub fn triplet_loss_baseline(tape: &mut Tape, f1: Var, f2: Var, f3: Var, margin: f64) -> Result<Var> {
    let d12 = tape.squared_l2_distance(f1, f2)?;
    let d13 = tape.squared_l2_distance(f1, f3)?;
    let a = tape.sub(d12, d13)?;
    let a = tape.affine(a, 1.0, margin)?;
    let h = tape.clamp_min(a, 0.0)?;
    tape.mean(h)
}

/// Softmax cross-entropy of `(B, K)` logits against one class per row.
pub fn identification_loss(tape: &mut Tape, logits: Var, targets: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.select_per_row(lp, targets)?;
    let m = tape.mean(picked)?;
    tape.scale(m, -1.0)
}
