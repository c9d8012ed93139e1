use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over checked coordinates of `|analytic − numeric| / max(1, |analytic|)`.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Coordinates whose central difference straddles a kink (hinge, relu, |·|).
    pub skipped: usize,
}

fn evaluate<F>(f: &F, x: &Tensor) -> Result<(f64, Vec<f64>)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::with_kink_recording();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    if tape.value(out).len() != 1 {
        return Err(Error::NonScalarLoss(tape.shape(out).to_vec()));
    }
    Ok((tape.scalar(out), tape.kinks().to_vec()))
}

/// Compares the tape gradient of the scalar function `f` at `x` against
/// central differences with the given `step`.
///
/// A coordinate is skipped when some kinked argument that moves with it sits
/// within `10·step` of its threshold, or lands on different sides of it at
/// `x ± step`.
pub fn finite_diff_check<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let mut tape = Tape::with_kink_recording();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let base_value = tape.scalar(out);
    let base_kinks = tape.kinks().to_vec();
    tape.backward(out)?;
    let analytic = tape.grad(xv).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let (again, _) = evaluate(&f, x)?;
    if again.to_bits() != base_value.to_bits() {
        return Err(Error::NonDeterministic(base_value, again));
    }

    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, skipped: 0 };
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + step;
        let (plus, kinks_plus) = evaluate(&f, &probe)?;
        probe.data_mut()[j] = orig - step;
        let (minus, kinks_minus) = evaluate(&f, &probe)?;
        probe.data_mut()[j] = orig;

        let near_kink = base_kinks
            .iter()
            .zip(kinks_plus.iter().zip(&kinks_minus))
            .any(|(k0, (kp, km))| kp != km && (k0.abs() < 10.0 * step || (kp > &0.0) != (km > &0.0)));
        if near_kink {
            report.skipped += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[j];
        let rel = (a - numeric).abs() / a.abs().max(1.0);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let x = Tensor::from_vec(vec![3.0]);
        let r = finite_diff_check(|t, x| {
            let y = t.mul(x, x)?;
            t.sum(y)
        }, &x, 1e-5)
        .unwrap();
        assert!(r.max_relative_error <= 1e-6, "{r:?}");
        assert_eq!(r.checked, 1);
    }

    #[test]
    fn rejects_non_positive_step() {
        let x = Tensor::from_vec(vec![1.0]);
        assert!(matches!(
            finite_diff_check(|t, x| t.sum(x), &x, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn detects_non_deterministic_function() {
        use std::cell::Cell;
        let calls = Cell::new(0.0);
        let x = Tensor::from_vec(vec![1.0]);
        let res = finite_diff_check(
            |t, x| {
                calls.set(calls.get() + 1.0);
                let y = t.affine(x, 1.0, calls.get())?;
                t.sum(y)
            },
            &x,
            1e-5,
        );
        assert!(matches!(res, Err(Error::NonDeterministic(..))));
    }

    #[test]
    fn skips_coordinates_on_a_hinge() {
        // max{x, 1} at x = 1 + 1e-7: both sides of the difference straddle the kink.
        let x = Tensor::from_vec(vec![1.0 + 1e-7, 5.0]);
        let r = finite_diff_check(|t, x| {
            let c = t.clamp_min(x, 1.0)?;
            t.sum(c)
        }, &x, 1e-5)
        .unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.checked, 1);
    }
}
