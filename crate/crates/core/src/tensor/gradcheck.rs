//! Central finite-difference checks against tape gradients.

use crate::error::{Error, Result};

use super::{Tape, Tensor, Var};

/// Outcome of a finite-difference comparison.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheck {
    /// `max |analytic - numeric| / max(1, |analytic|)` over checked coordinates.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±step evaluations crossed a ReLU or max-pool kink.
    pub skipped_kinks: usize,
}

fn eval<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone())?;
    let out = f(&mut tape, xv)?;
    let value = tape.value(out);
    if !value.is_scalar() {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite {
            op: "finite_diff_check",
        });
    }
    Ok((v, tape.activation_signature()))
}

/// Compares the tape gradient of scalar `f` at `x` with central differences
/// on every coordinate.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..x.numel()).collect();
    finite_diff_check_at(f, x, step, &coords)
}

/// As [`finite_diff_check`], restricted to the listed coordinates.
pub fn finite_diff_check_at<F>(f: F, x: &Tensor<f64>, step: f64, coords: &[usize]) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.variable(x.clone())?;
    let out = f(&mut tape, xv)?;
    if !tape.value(out).data()[0].is_finite() {
        return Err(Error::NonFinite {
            op: "finite_diff_check",
        });
    }
    let signature = tape.activation_signature();
    tape.backward(out)?;
    let analytic = tape
        .grad(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut report = GradCheck::default();
    let mut probe = x.clone();
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let (plus, sig_plus) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig - step;
        let (minus, sig_minus) = eval(&f, &probe)?;
        probe.data_mut()[i] = orig;
        if sig_plus != signature || sig_minus != signature {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
