//! Product-structure covariance `{Sigma}_ij = u(t_i) v(t_j)` for `i <= j`.
//!
//! `v(t) = e^{B(t)}` and `u(t) = e^{B(t)} ∫_0^t e^{-2B} sigma^2`, so
//! `u/v` is strictly increasing whenever `sigma^2 > 0`. That monotonicity
//! makes `Sigma` positive definite and gives an O(n) inverse quadratic form
//! and log-determinant.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Domain, Model};
use crate::moments::MomentEngine;
use crate::quadrature::QuadratureSettings;

/// Largest design for which dense matrices are formed.
pub const DENSE_CAP: usize = 2048;

const RATIO_TOL: f64 = 1e-12;

/// Strictly increasing sampling times inside a domain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplingDesign {
    times: Vec<f64>,
    domain: Domain,
}

impl SamplingDesign {
    pub fn new(times: Vec<f64>, domain: Domain) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Design("a design needs at least one time".into()));
        }
        if let Some(t) = times.iter().find(|t| !domain.contains(**t)) {
            return Err(Error::Design(format!(
                "time {t} outside domain [{}, {}]",
                domain.lo(),
                domain.hi()
            )));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::Design(format!(
                "times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self { times, domain })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Largest gap between consecutive times (zero for a single point).
    pub fn norm(&self) -> f64 {
        self.times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }

    pub fn into_times(self) -> Vec<f64> {
        self.times
    }
}

/// The `(u, v)` factor pair of a sampled covariance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductCovariance {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl ProductCovariance {
    /// Wraps raw factors. Only shape and `v > 0` are checked here;
    /// degeneracy surfaces in the operations that depend on it.
    pub fn from_factors(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() || u.is_empty() {
            return Err(Error::Dimension(format!(
                "factor lengths {} and {} must match and be non-zero",
                u.len(),
                v.len()
            )));
        }
        if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) || u.iter().any(|x| !x.is_finite()) {
            return Err(Error::Consistency(
                "factors must be finite with v > 0".into(),
            ));
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `u_i / v_i`, the marginal variance scaled by `e^{-2B(t_i)}`.
    pub fn ratios(&self) -> Vec<f64> {
        self.u.iter().zip(&self.v).map(|(u, v)| u / v).collect()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        self.u[lo] * self.v[hi]
    }

    pub fn dense(&self) -> Result<DMatrix<f64>> {
        let n = self.len();
        if n > DENSE_CAP {
            return Err(Error::TooLarge { n, cap: DENSE_CAP });
        }
        Ok(DMatrix::from_fn(n, n, |i, j| self.entry(i, j)))
    }

    /// Conditional variance increments `v_i^2 (u_i/v_i - u_{i-1}/v_{i-1})`,
    /// with the first entry `u_1 v_1`.
    pub fn increments(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.len());
        out.push(self.u[0] * self.v[0]);
        for i in 1..self.len() {
            let d = self.u[i] / self.v[i] - self.u[i - 1] / self.v[i - 1];
            out.push(self.v[i] * self.v[i] * d);
        }
        if let Some(i) = out.iter().position(|&d| !(d > 0.0)) {
            return Err(Error::DegenerateDesign(format!(
                "non-positive conditional variance at index {i}"
            )));
        }
        Ok(out)
    }

    /// `ln det Sigma` in O(n).
    pub fn log_det(&self) -> Result<f64> {
        Ok(self.increments()?.iter().map(|d| d.ln()).sum())
    }
}

/// Builds `(u, v)` for a design and checks the ratio monotonicity.
pub fn product_factors(
    model: &Model,
    theta: &[f64],
    design: &SamplingDesign,
) -> Result<ProductCovariance> {
    product_factors_with(model, theta, design.times(), &QuadratureSettings::default())
}

pub(crate) fn product_factors_with(
    model: &Model,
    theta: &[f64],
    times: &[f64],
    settings: &QuadratureSettings,
) -> Result<ProductCovariance> {
    let eng = MomentEngine::new(model, theta, *settings);
    let mut u = Vec::with_capacity(times.len());
    let mut v = Vec::with_capacity(times.len());
    for &t in times {
        let vt = eng.antiderivative(t)?.exp();
        u.push(eng.variance(t)? / vt);
        v.push(vt);
    }
    let pc = ProductCovariance::from_factors(u, v)?;
    let r = pc.ratios();
    for i in 1..r.len() {
        if !(r[i] - r[i - 1] > RATIO_TOL * r[i].abs()) {
            return Err(Error::Consistency(format!(
                "u/v not increasing between t = {} and t = {} (sigma^2 <= 0 somewhere?)",
                times[i - 1],
                times[i]
            )));
        }
    }
    if !(r[0] > 0.0) {
        return Err(Error::Consistency(format!(
            "V[X({})] is not positive",
            times[0]
        )));
    }
    Ok(pc)
}

/// `d u_i / d theta_j` and `d v_i / d theta_j`, indexed `[j][i]`.
pub(crate) fn product_factor_gradients(
    eng: &MomentEngine<'_>,
    times: &[f64],
    pc: &ProductCovariance,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let m = eng.model().partition().len();
    let n = times.len();
    let mut du = vec![vec![0.0; n]; m];
    let mut dv = vec![vec![0.0; n]; m];
    for (i, &t) in times.iter().enumerate() {
        let db = eng.antiderivative_gradient(t)?;
        let dvar = eng.variance_gradient(t)?;
        let (u, v) = (pc.u[i], pc.v[i]);
        for j in 0..m {
            let dvi = v * db[j];
            dv[j][i] = dvi;
            du[j][i] = (dvar[j] - u * dvi) / v;
        }
    }
    Ok((du, dv))
}

/// `x^T Sigma^{-1} y` by the telescoping formula, O(n).
pub fn quad_form_inverse(pc: &ProductCovariance, x: &[f64], y: &[f64]) -> Result<f64> {
    let n = pc.len();
    if x.len() != n || y.len() != n {
        return Err(Error::Dimension(format!(
            "vectors of length {} and {} against n = {n}",
            x.len(),
            y.len()
        )));
    }
    let (u, v) = (&pc.u, &pc.v);
    let d0 = u[0] * v[0];
    if !(d0 > 0.0) {
        return Err(Error::DegenerateDesign("u_1 v_1 must be positive".into()));
    }
    let mut acc = x[0] * y[0] / d0;
    for i in 1..n {
        let den = u[i] / v[i] - u[i - 1] / v[i - 1];
        if !(den > 0.0) {
            return Err(Error::DegenerateDesign(format!(
                "non-increasing u/v at index {i}"
            )));
        }
        let dx = x[i] / v[i] - x[i - 1] / v[i - 1];
        let dy = y[i] / v[i] - y[i - 1] / v[i - 1];
        acc += dx * dy / den;
    }
    Ok(acc)
}

/// Smallest eigenvalue of the dense covariance matrix.
pub fn min_eigenvalue(pc: &ProductCovariance) -> Result<f64> {
    let dense = pc.dense()?;
    let eig = SymmetricEigen::new(dense);
    Ok(eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min))
}
