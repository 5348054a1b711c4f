//! Information of the fully observed trajectory on a domain and the
//! divergent volatility term that separates it from dense designs.
//!
//! For a design pinned at both endpoints of `[T_lo, T_hi]`, the exact
//! information minus the O-term converges entrywise to
//!
//! ```text
//! dE dE^T / V |_{T_lo} + 1/2 dlnV dlnV^T |_{T_lo}
//!     + ∫ [df df^T + db db^T V] / sigma^2 dt,   df = da + db E[X(t)]
//! ```

use nalgebra::DMatrix;

use crate::covariance::SamplingDesign;
use crate::design::equidistant_design;
use crate::error::{Error, Result};
use crate::fisher::{fim_exact, marginal_info, InfoMatrix};
use crate::model::{coefficient_partials, Domain, Model};
use crate::moments::MomentEngine;
use crate::quadrature::{integrate_vec, QuadratureSettings};

/// Full-trajectory information on a domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticInfo {
    pub i_inf: InfoMatrix,
    pub domain: Domain,
    /// Labels whose rows the O-term augments, i.e. those that enter
    /// `sigma^2`.
    pub o_term_labels: Vec<String>,
    /// `1/2 ∫ [dln sigma^2 db^T + db dln sigma^2^T] dt`. Not part of
    /// `i_inf`: it is the finite limit that the transition variance terms
    /// leave in the volatility rows beyond the O-term, nonzero whenever `b`
    /// and `sigma^2` depend on different parameters.
    pub volatility_cross: InfoMatrix,
    /// The summand `1/2 dlnV dlnV^T` at `T_lo` alone, already included in
    /// `i_inf`. Adding it once more gives the variant with weight 1.
    pub initial_variance_term: InfoMatrix,
}

/// Upper-triangle index pairs of an `m x m` matrix, row-major.
fn triangle(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|i| (i..m).map(move |j| (i, j))).collect()
}

pub fn fim_asymptotic(
    model: &Model,
    theta: &[f64],
    domain: &Domain,
    quad: &QuadratureSettings,
) -> Result<AsymptoticInfo> {
    quad.validate()?;
    let m = model.partition().len();
    let eng = MomentEngine::new(model, theta, *quad);
    let (lo, hi) = (domain.lo(), domain.hi());

    let mut total = marginal_info(&eng, lo)?;
    let v_lo = eng.variance(lo)?;
    let dl: Vec<f64> = eng
        .variance_gradient(lo)?
        .iter()
        .map(|d| d / v_lo)
        .collect();
    let initial_variance_term = DMatrix::from_fn(m, m, |i, j| 0.5 * dl[i] * dl[j]);

    let pairs = triangle(m);
    let np = pairs.len();
    // Components [0, np) hold the trajectory integral, [np, 2 np) the
    // volatility cross limit.
    let integral = integrate_vec(
        |t| {
            let p = coefficient_partials(model, t, theta)?;
            let e = eng.mean(t)?;
            let v = eng.variance(t)?;
            let s2 = model.sigma_sq(t, theta)?;
            let df: Vec<f64> = (0..m).map(|j| p.a[j] + p.b[j] * e).collect();
            let dl: Vec<f64> = p.sigma_sq.iter().map(|d| d / s2).collect();
            let main = pairs
                .iter()
                .map(|&(i, j)| (df[i] * df[j] + p.b[i] * p.b[j] * v) / s2);
            let cross = pairs
                .iter()
                .map(|&(i, j)| 0.5 * (dl[i] * p.b[j] + p.b[i] * dl[j]));
            Ok(main.chain(cross).collect())
        },
        lo,
        hi,
        2 * np,
        quad,
    )?;
    let mut cross = DMatrix::zeros(m, m);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        total[(i, j)] += integral[k];
        cross[(i, j)] = integral[np + k];
        if i != j {
            total[(j, i)] += integral[k];
            cross[(j, i)] = integral[np + k];
        }
    }

    let probe = coefficient_partials(model, 0.5 * (lo + hi), theta)?;
    let o_term_labels = model
        .labels()
        .iter()
        .zip(&probe.sigma_sq)
        .filter(|(_, d)| **d != 0.0)
        .map(|(l, _)| l.clone())
        .collect();

    Ok(AsymptoticInfo {
        i_inf: InfoMatrix::new(model.labels().to_vec(), total)?,
        domain: *domain,
        o_term_labels,
        volatility_cross: InfoMatrix::new(model.labels().to_vec(), cross)?,
        initial_variance_term: InfoMatrix::new(model.labels().to_vec(), initial_variance_term)?,
    })
}

/// `1/2 Σ_{i>=2} dln sigma^2(t_i) dln sigma^2(t_i)^T`.
pub fn o_term(model: &Model, theta: &[f64], design: &SamplingDesign) -> Result<InfoMatrix> {
    let m = model.partition().len();
    let mut out = DMatrix::zeros(m, m);
    for &t in design.times().iter().skip(1) {
        let p = coefficient_partials(model, t, theta)?;
        let s2 = model.sigma_sq(t, theta)?;
        let g: Vec<f64> = p.sigma_sq.iter().map(|d| d / s2).collect();
        for i in 0..m {
            for j in 0..m {
                out[(i, j)] += 0.5 * g[i] * g[j];
            }
        }
    }
    InfoMatrix::new(model.labels().to_vec(), out)
}

/// Max-abs entry of `I(tau_n) - I_inf - O(tau_n)` for the equidistant
/// design with `n` points pinned at both endpoints.
pub fn convergence_gap(model: &Model, theta: &[f64], domain: &Domain, n: usize) -> Result<f64> {
    let asym = fim_asymptotic(model, theta, domain, &QuadratureSettings::default())?;
    convergence_gap_with(model, theta, &asym, n)
}

/// As [`convergence_gap`], reusing a precomputed asymptotic information.
pub fn convergence_gap_with(
    model: &Model,
    theta: &[f64],
    asym: &AsymptoticInfo,
    n: usize,
) -> Result<f64> {
    Ok(gap_matrix(model, theta, asym, n)?.max_abs())
}

/// `I(tau_n) - I_inf - O(tau_n)` for the equidistant `n`-point design.
pub fn gap_matrix(
    model: &Model,
    theta: &[f64],
    asym: &AsymptoticInfo,
    n: usize,
) -> Result<InfoMatrix> {
    if n < 2 {
        return Err(Error::Design(format!(
            "convergence ladder needs n >= 2, got {n}"
        )));
    }
    let design = equidistant_design(&asym.domain, n)?;
    let exact = fim_exact(model, theta, &design)?;
    let o = o_term(model, theta, &design)?;
    exact.difference(&asym.i_inf)?.difference(&o)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, make_builtin_model_with, BuiltinModel, ModelOptions};
    use std::collections::BTreeMap;

    fn p(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn gompertz(gamma: f64) -> Model {
        make_builtin_model(
            BuiltinModel::GompertzLog,
            &p(&[("rho", 1.0), ("delta", 1.0), ("gamma", gamma), ("Y0", 1.0)]),
        )
        .unwrap()
    }

    fn dom() -> Domain {
        Domain::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn gompertz_rho_entry() {
        let m = gompertz(1.0);
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        let expected = 0.632_120_558_828_557_7_f64.powi(2) / 0.432_332_358_381_693_6 + 1.0;
        assert!((a.i_inf.get("rho", "rho").unwrap() - expected).abs() < 1e-9);
        assert!((expected - 1.92423).abs() < 1e-5);
        assert_eq!(a.o_term_labels, vec!["gamma".to_string()]);
    }

    #[test]
    fn brownian_mean_only_entry() {
        let m = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &p(&[("theta1", 0.2), ("theta3", 2.0)]),
        )
        .unwrap();
        let d = Domain::new(0.5, 3.0).unwrap();
        let a = fim_asymptotic(&m, m.nominal(), &d, &QuadratureSettings::default()).unwrap();
        // (dE/dθ1)^2 / V + c^2 (T_hi − T_lo) / σ^2 with E = θ1 t, V = θ3^2 t
        let expected = 0.25 / (4.0 * 0.5) + 2.5 / 4.0;
        assert!((a.i_inf.get("theta1", "theta1").unwrap() - expected).abs() < 1e-10);
    }

    #[test]
    fn known_x0_has_no_row() {
        let m = gompertz(1.0);
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        assert!(a.i_inf.index_of("X0").is_none());
        let m = make_builtin_model_with(
            BuiltinModel::MeanReversionOu,
            &p(&[("theta1", 0.0), ("theta2", 1.0), ("theta3", 1.0)]),
            ModelOptions { estimate_x0: true },
        )
        .unwrap();
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        assert!(a.i_inf.index_of("X0").is_some());
    }

    #[test]
    fn o_term_examples() {
        let m = gompertz(1.0);
        let d = equidistant_design(&dom(), 5).unwrap();
        let o = o_term(&m, m.nominal(), &d).unwrap();
        assert!((o.get("gamma", "gamma").unwrap() - 8.0).abs() < 1e-12);
        assert_eq!(o.get("rho", "rho").unwrap(), 0.0);
        assert_eq!(o.get("delta", "gamma").unwrap(), 0.0);

        let m = gompertz(2.0);
        let d = equidistant_design(&dom(), 3).unwrap();
        let o = o_term(&m, m.nominal(), &d).unwrap();
        assert!((o.get("gamma", "gamma").unwrap() - 1.0).abs() < 1e-12);

        let d = SamplingDesign::new(vec![1.5], dom()).unwrap();
        assert_eq!(o_term(&m, m.nominal(), &d).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn interest_block_gap_decreases_on_ladder() {
        let m = gompertz(1.0);
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        let kept = ["rho".to_string(), "delta".to_string()];
        let g: Vec<f64> = [2, 4, 16, 64]
            .iter()
            .map(|&n| {
                gap_matrix(&m, m.nominal(), &a, n)
                    .unwrap()
                    .block(&kept)
                    .unwrap()
                    .max_abs()
            })
            .collect();
        assert!(g.windows(2).all(|w| w[1] < w[0]), "{g:?}");
        assert!(convergence_gap(&m, m.nominal(), &dom(), 1).is_err());
    }

    #[test]
    fn full_gap_tends_to_volatility_cross_limit() {
        let m = gompertz(1.0);
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        // db/ddelta = -1, dln sigma^2/dgamma = 2/gamma on a unit-length domain.
        assert!((a.volatility_cross.get("delta", "gamma").unwrap() + 1.0).abs() < 1e-10);
        assert_eq!(a.volatility_cross.get("rho", "gamma").unwrap(), 0.0);
        let corrected: Vec<f64> = [4, 16, 64]
            .iter()
            .map(|&n| {
                let g = gap_matrix(&m, m.nominal(), &a, n).unwrap();
                g.difference(&a.volatility_cross).unwrap().max_abs()
            })
            .collect();
        assert!(corrected.windows(2).all(|w| w[1] < w[0]), "{corrected:?}");
        assert!(corrected[2] < corrected[0] / 4.0);
        let full = convergence_gap_with(&m, m.nominal(), &a, 256).unwrap();
        assert!((full - 1.0).abs() < 1e-2, "{full}");
    }

    #[test]
    fn brownian_gap_decreases() {
        let m = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &p(&[("theta1", 0.7), ("theta3", 1.2)]),
        )
        .unwrap();
        let a = fim_asymptotic(&m, m.nominal(), &dom(), &QuadratureSettings::default()).unwrap();
        let g: Vec<f64> = [2, 4, 16]
            .iter()
            .map(|&n| convergence_gap_with(&m, m.nominal(), &a, n).unwrap())
            .collect();
        // Brownian motion with drift is already at its limit for any n.
        assert!(g.iter().all(|&x| x < 1e-9), "{g:?}");
    }
}
