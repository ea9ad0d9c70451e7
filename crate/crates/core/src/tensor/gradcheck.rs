use super::dense::Tensor;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of a central-difference comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_index: usize,
}

/// Compares the tape gradient of `f` at `x` against central differences
/// with step `step`. Per coordinate the error is
/// `|analytic − numeric| / max(1, |analytic|, |numeric|)`; the maximum is
/// returned.
pub fn grad_check<F>(f: F, x: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    grad_check_detailed(f, x, step).map(|c| c.max_rel_error)
}

pub fn grad_check_detailed<F>(f: F, x: &Tensor, step: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.param(x)?;
    let y = f(&mut tape, xv)?;
    let analytic = tape.backward(y)?.get_or_zeros(&tape, xv);

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.param(probe)?;
        let out = f(&mut tape, v)?;
        let value = tape.value(out);
        if !value.is_scalar() {
            return Err(Error::Shape("grad_check needs a scalar function".into()));
        }
        let value = value.item();
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite function value during grad_check".into()));
        }
        Ok(value)
    };

    let mut probe = x.clone();
    let mut worst = GradCheck {
        max_rel_error: 0.0,
        worst_index: 0,
    };
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[i];
        if !a.is_finite() {
            return Err(Error::Numeric(format!("non-finite analytic gradient at {i}")));
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > worst.max_rel_error {
            worst = GradCheck {
                max_rel_error: err,
                worst_index: i,
            };
        }
    }
    Ok(worst)
}
