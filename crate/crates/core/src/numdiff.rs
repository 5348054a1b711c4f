//! Central finite differences with the step `cbrt(eps) * max(1, |x|)`.

use crate::error::{Error, Result};

pub(crate) fn step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Gradient of `f` at `x` by central differences.
pub(crate) fn gradient<F>(x: &[f64], mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step(x[j]);
        probe[j] = x[j] + h;
        let up = f(&probe)?;
        probe[j] = x[j] - h;
        let down = f(&probe)?;
        probe[j] = x[j];
        // Use the realised step so rounding in x +/- h does not bias the quotient.
        let d = (up - down) / ((x[j] + h) - (x[j] - h));
        if !d.is_finite() {
            return Err(Error::NonFinite {
                what: "finite-difference gradient",
                t: f64::NAN,
            });
        }
        out.push(d);
    }
    Ok(out)
}
