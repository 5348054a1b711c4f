//! Marginal, joint and transition moments of the linear SDE solution.
//!
//! With `B` an antiderivative of `b`:
//!
//! ```text
//! E[X(t)]        = e^{B(t)-B(0)} X0 + ∫_0^t e^{B(t)-B(v)} a(v) dv
//! V[X(t)]        = ∫_0^t e^{2[B(t)-B(v)]} sigma^2(v) dv
//! C[X(s), X(t)]  = e^{B(t)-B(s)} V[X(s)],   s <= t
//! ```
//!
//! Closed forms are used when the model supplies them. Otherwise `B` is
//! itself integrated numerically, memoised on a sorted knot list so that the
//! nested integrands do not re-integrate from zero at every node.

use std::cell::RefCell;

use crate::error::{Error, Result};
use crate::model::Model;
use crate::numdiff;
use crate::quadrature::{integrate, QuadratureSettings};

/// One exact Gaussian transition `X(t) | X(s) = x ~ N(phi x + offset, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub phi: f64,
    pub offset: f64,
    pub variance: f64,
}

/// Per-call evaluator of moments at one parameter value.
///
/// Holds a cache of numerically integrated `B(t)` values, so it is cheap to
/// construct and intended to be short-lived. Not shared across threads.
pub struct MomentEngine<'m> {
    model: &'m Model,
    theta: &'m [f64],
    settings: QuadratureSettings,
    knots: RefCell<Vec<(f64, f64)>>,
}

fn check_time(t: f64) -> Result<()> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Ordering(format!("time t >= 0, got {t}")));
    }
    Ok(())
}

fn tight(s: &QuadratureSettings) -> QuadratureSettings {
    QuadratureSettings {
        abs_tol: s.abs_tol.min(1e-14),
        rel_tol: s.rel_tol.min(1e-13),
        max_subdivisions: s.max_subdivisions.max(4000),
    }
}

impl<'m> MomentEngine<'m> {
    pub fn new(model: &'m Model, theta: &'m [f64], settings: QuadratureSettings) -> Self {
        Self {
            model,
            theta,
            settings,
            knots: RefCell::new(vec![(0.0, 0.0)]),
        }
    }

    pub fn with_defaults(model: &'m Model, theta: &'m [f64]) -> Self {
        Self::new(model, theta, QuadratureSettings::default())
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    /// `B(t) - B(0)`.
    pub fn antiderivative(&self, t: f64) -> Result<f64> {
        if let (Some(bt), Some(b0)) = (
            self.model.closed_antiderivative(t, self.theta),
            self.model.closed_antiderivative(0.0, self.theta),
        ) {
            return Ok(bt - b0);
        }
        let (from, base) = {
            let knots = self.knots.borrow();
            let idx = knots.partition_point(|&(k, _)| k <= t);
            knots[idx - 1]
        };
        if from == t {
            return Ok(base);
        }
        let inc = integrate(|v| Ok(self.model.b(v, self.theta)), from, t, &self.settings)?;
        let value = base + inc;
        let mut knots = self.knots.borrow_mut();
        let idx = knots.partition_point(|&(k, _)| k <= t);
        knots.insert(idx, (t, value));
        Ok(value)
    }

    pub fn mean(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if let Some(m) = self.model.closed_mean(t, self.theta) {
            return Ok(m);
        }
        let x0 = self.model.initial_value(self.theta);
        if t == 0.0 {
            return Ok(x0);
        }
        let bt = self.antiderivative(t)?;
        let drift = integrate(
            |v| Ok((bt - self.antiderivative(v)?).exp() * self.model.a(v, self.theta)),
            0.0,
            t,
            &self.settings,
        )?;
        Ok(bt.exp() * x0 + drift)
    }

    pub fn variance(&self, t: f64) -> Result<f64> {
        check_time(t)?;
        if let Some(v) = self.model.closed_variance(t, self.theta) {
            return Ok(v);
        }
        if t == 0.0 {
            return Ok(0.0);
        }
        let bt = self.antiderivative(t)?;
        integrate(
            |v| {
                let s2 = self.model.sigma_sq(v, self.theta)?;
                Ok((2.0 * (bt - self.antiderivative(v)?)).exp() * s2)
            },
            0.0,
            t,
            &self.settings,
        )
    }

    /// `C[X(s), X(t)]` for any order of `s` and `t`.
    pub fn covariance(&self, s: f64, t: f64) -> Result<f64> {
        check_time(s)?;
        check_time(t)?;
        let (lo, hi) = if s <= t { (s, t) } else { (t, s) };
        let v = self.variance(lo)?;
        Ok((self.antiderivative(hi)? - self.antiderivative(lo)?).exp() * v)
    }

    /// Coefficients of the exact transition from `s` to `t > s`.
    ///
    /// The offset and variance are integrated over `[s, t]` directly rather
    /// than obtained as differences of marginal moments, so they stay
    /// accurate for short lags.
    pub fn transition(&self, s: f64, t: f64) -> Result<Transition> {
        check_time(s)?;
        check_time(t)?;
        if !(s < t) {
            return Err(Error::Ordering(format!("s < t, got s = {s}, t = {t}")));
        }
        let bt = self.antiderivative(t)?;
        let bs = self.antiderivative(s)?;
        let offset = integrate(
            |v| Ok((bt - self.antiderivative(v)?).exp() * self.model.a(v, self.theta)),
            s,
            t,
            &self.settings,
        )?;
        let variance = integrate(
            |v| {
                let s2 = self.model.sigma_sq(v, self.theta)?;
                Ok((2.0 * (bt - self.antiderivative(v)?)).exp() * s2)
            },
            s,
            t,
            &self.settings,
        )?;
        Ok(Transition {
            phi: (bt - bs).exp(),
            offset,
            variance,
        })
    }

    /// `(E[X(t) | X(s) = x_s], V[X(t) | X(s)])`.
    pub fn conditional_moments(&self, s: f64, t: f64, x_s: f64) -> Result<(f64, f64)> {
        let tr = self.transition(s, t)?;
        Ok((tr.phi * x_s + tr.offset, tr.variance))
    }

    pub fn mean_gradient(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        if let Some(g) = self.model.closed_mean_gradient(t, self.theta) {
            return Ok(g);
        }
        let settings = tight(&self.settings);
        numdiff::gradient(self.theta, |th| {
            MomentEngine::new(self.model, th, settings).mean(t)
        })
    }

    pub fn variance_gradient(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        if let Some(g) = self.model.closed_variance_gradient(t, self.theta) {
            return Ok(g);
        }
        if t == 0.0 {
            return Ok(vec![0.0; self.theta.len()]);
        }
        let settings = tight(&self.settings);
        numdiff::gradient(self.theta, |th| {
            MomentEngine::new(self.model, th, settings).variance(t)
        })
    }

    /// `d[B(t) - B(0)] / d theta`.
    pub fn antiderivative_gradient(&self, t: f64) -> Result<Vec<f64>> {
        check_time(t)?;
        if let (Some(gt), Some(g0)) = (
            self.model.closed_antiderivative_gradient(t, self.theta),
            self.model.closed_antiderivative_gradient(0.0, self.theta),
        ) {
            return Ok(gt.iter().zip(&g0).map(|(a, b)| a - b).collect());
        }
        let settings = tight(&self.settings);
        numdiff::gradient(self.theta, |th| {
            MomentEngine::new(self.model, th, settings).antiderivative(t)
        })
    }
}

pub fn mean(model: &Model, theta: &[f64], t: f64) -> Result<f64> {
    MomentEngine::with_defaults(model, theta).mean(t)
}

pub fn variance(model: &Model, theta: &[f64], t: f64) -> Result<f64> {
    MomentEngine::with_defaults(model, theta).variance(t)
}

pub fn covariance(model: &Model, theta: &[f64], s: f64, t: f64) -> Result<f64> {
    MomentEngine::with_defaults(model, theta).covariance(s, t)
}

pub fn conditional_moments(
    model: &Model,
    theta: &[f64],
    s: f64,
    t: f64,
    x_s: f64,
) -> Result<(f64, f64)> {
    MomentEngine::with_defaults(model, theta).conditional_moments(s, t, x_s)
}

pub fn mean_gradient(model: &Model, theta: &[f64], t: f64) -> Result<Vec<f64>> {
    MomentEngine::with_defaults(model, theta).mean_gradient(t)
}

pub fn variance_gradient(model: &Model, theta: &[f64], t: f64) -> Result<Vec<f64>> {
    MomentEngine::with_defaults(model, theta).variance_gradient(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, BuiltinModel};
    use std::collections::BTreeMap;

    fn gompertz(rho: f64, delta: f64, gamma: f64) -> Model {
        let p: BTreeMap<String, f64> = [
            ("rho", rho),
            ("delta", delta),
            ("gamma", gamma),
            ("Y0", 1.0),
        ]
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect();
        make_builtin_model(BuiltinModel::GompertzLog, &p).unwrap()
    }

    fn brownian(theta1: f64, theta3: f64) -> Model {
        let p: BTreeMap<String, f64> = [("theta1", theta1), ("theta3", theta3)]
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        make_builtin_model(BuiltinModel::BrownianDrift, &p).unwrap()
    }

    #[test]
    fn gompertz_closed_forms() {
        let m = gompertz(1.0, 1.0, 1.0);
        let th = m.nominal();
        // 0.5 (1 - e^-1) and 0.5 (1 - e^-2)
        assert!((mean(&m, th, 1.0).unwrap() - 0.316_060_279_414_278_6).abs() < 1e-12);
        assert!((variance(&m, th, 1.0).unwrap() - 0.432_332_358_381_693_6).abs() < 1e-12);
        let c = covariance(&m, th, 1.0, 2.0).unwrap();
        assert!((c - (-1.0f64).exp() * 0.432_332_358_381_693_6).abs() < 1e-12);
        assert!((c - 0.159_046_6).abs() < 1e-6);
        assert_eq!(covariance(&m, th, 2.0, 1.0).unwrap(), c);
        assert_eq!(covariance(&m, th, 0.0, 1.0).unwrap(), 0.0);
        assert_eq!(
            covariance(&m, th, 1.5, 1.5).unwrap(),
            variance(&m, th, 1.5).unwrap()
        );
    }

    #[test]
    fn zero_time() {
        for m in [gompertz(1.0, 2.0, 0.5), brownian(0.3, 1.0)] {
            let n = m.numeric();
            let th = m.nominal();
            assert_eq!(mean(&n, th, 0.0).unwrap(), 0.0);
            assert_eq!(variance(&n, th, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn brownian_constant_drift() {
        let m = brownian(0.7, 1.5).numeric();
        let th = m.nominal();
        assert!((mean(&m, th, 2.0).unwrap() - 1.4).abs() < 1e-12);
        assert!((variance(&m, th, 3.0).unwrap() - 3.0 * 2.25).abs() < 1e-12);
    }

    #[test]
    fn gompertz_gradients() {
        let m = gompertz(1.0, 1.0, 1.0);
        let th = m.nominal();
        let dm = mean_gradient(&m, th, 1.0).unwrap();
        assert!((dm[0] - 0.632_120_558_828_557_7).abs() < 1e-12);
        let dv = variance_gradient(&m, th, 1.0).unwrap();
        assert_eq!(dv[0], 0.0);
        assert!((dv[2] - 0.864_664_716_763_387_3).abs() < 1e-12);
    }

    #[test]
    fn conditional_lag_one() {
        let m = gompertz(1.0, 1.0, 1.0);
        let (cm, cv) = conditional_moments(&m, m.nominal(), 1.0, 2.0, 0.0).unwrap();
        assert!((cm - 0.316_060_279_414_278_6).abs() < 1e-10);
        assert!((cv - 0.432_332_358_381_693_6).abs() < 1e-10);
    }

    #[test]
    fn conditional_tower_property() {
        let m = gompertz(2.0, 0.7, 1.3);
        let th = m.nominal();
        let ms = mean(&m, th, 0.8).unwrap();
        let (cm, _) = conditional_moments(&m, th, 0.8, 1.9, ms).unwrap();
        assert!((cm - mean(&m, th, 1.9).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn short_lag_expansion() {
        let m = gompertz(1.0, 1.0, 1.0);
        let (_, cv) = conditional_moments(&m, m.nominal(), 1.0, 1.0 + 1e-6, 0.0).unwrap();
        assert!((cv / 1e-6 - 1.0).abs() < 1e-3);
    }

    #[test]
    fn ordering_error() {
        let m = gompertz(1.0, 1.0, 1.0);
        assert!(matches!(
            conditional_moments(&m, m.nominal(), 1.0, 1.0, 0.0),
            Err(Error::Ordering(_))
        ));
        assert!(mean(&m, m.nominal(), -1.0).is_err());
    }

    #[test]
    fn antiderivative_cache_is_consistent() {
        let m = gompertz(1.0, 1.3, 1.0).numeric();
        let th = m.nominal();
        let eng = MomentEngine::with_defaults(&m, th);
        let late = eng.antiderivative(2.0).unwrap();
        let early = eng.antiderivative(0.5).unwrap();
        let mid = eng.antiderivative(1.0).unwrap();
        assert!((late + 2.6).abs() < 1e-12);
        assert!((early + 0.65).abs() < 1e-12);
        assert!((mid + 1.3).abs() < 1e-12);
    }
}
