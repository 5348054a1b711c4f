//! Fisher information of sampled paths.
//!
//! The exact information of a design uses the Gaussian form
//! `dE^T Sigma^{-1} dE + 1/2 tr(Sigma^{-1} dSigma Sigma^{-1} dSigma)`, with
//! the mean term evaluated in O(n) from the product factors. The Markov
//! decomposition sums expected transition informations and is an
//! independent route to the same matrix.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::covariance::{
    product_factor_gradients, product_factors_with, quad_form_inverse, SamplingDesign, DENSE_CAP,
};
use crate::error::{Error, Result};
use crate::model::{coefficient_partials, Domain, Model, Role};
use crate::moments::MomentEngine;
use crate::quadrature::{integrate, QuadratureSettings};

const SYMMETRY_TOL: f64 = 1e-12;

/// Symmetric information matrix with labelled rows and columns.
#[derive(Debug, Clone, PartialEq)]
pub struct InfoMatrix {
    labels: Vec<String>,
    entries: DMatrix<f64>,
}

impl InfoMatrix {
    /// Validates symmetry to `1e-12 (1 + max |entry|)` and symmetrises.
    pub fn new(labels: Vec<String>, entries: DMatrix<f64>) -> Result<Self> {
        let k = labels.len();
        if entries.nrows() != k || entries.ncols() != k {
            return Err(Error::Dimension(format!(
                "{}x{} matrix for {k} labels",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let scale = 1.0 + entries.amax();
        let asym = (&entries - entries.transpose()).amax();
        if !(asym <= SYMMETRY_TOL * scale) {
            return Err(Error::Asymmetric(asym));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                what: "information matrix",
                t: f64::NAN,
            });
        }
        let entries = (&entries + entries.transpose()) * 0.5;
        Ok(Self { labels, entries })
    }

    pub fn zeros(labels: Vec<String>) -> Self {
        let k = labels.len();
        Self {
            labels,
            entries: DMatrix::zeros(k, k),
        }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        Some(self.entries[(self.index_of(row)?, self.index_of(col)?)])
    }

    /// Sub-matrix on `labels`, in the given order.
    pub fn block(&self, labels: &[String]) -> Result<InfoMatrix> {
        let idx = labels
            .iter()
            .map(|l| {
                self.index_of(l)
                    .ok_or_else(|| Error::UnknownParameter(l.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let k = idx.len();
        Ok(InfoMatrix {
            labels: labels.to_vec(),
            entries: DMatrix::from_fn(k, k, |i, j| self.entries[(idx[i], idx[j])]),
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        if self.dim() == 0 {
            return Vec::new();
        }
        let mut ev: Vec<f64> = SymmetricEigen::new(self.entries.clone())
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }

    pub fn is_nonnegative_definite(&self, tol: f64) -> bool {
        self.min_eigenvalue() >= -tol
    }

    pub fn scaled(&self, c: f64) -> InfoMatrix {
        InfoMatrix {
            labels: self.labels.clone(),
            entries: &self.entries * c,
        }
    }

    /// `self - other` on identical label sets.
    pub fn difference(&self, other: &InfoMatrix) -> Result<InfoMatrix> {
        let other = other.block(&self.labels)?;
        Ok(InfoMatrix {
            labels: self.labels.clone(),
            entries: &self.entries - &other.entries,
        })
    }

    pub fn sum(&self, other: &InfoMatrix) -> Result<InfoMatrix> {
        let other = other.block(&self.labels)?;
        Ok(InfoMatrix {
            labels: self.labels.clone(),
            entries: &self.entries + &other.entries,
        })
    }

    /// `self - other` is nonnegative definite up to `-tol`.
    pub fn loewner_dominates(&self, other: &InfoMatrix, tol: f64) -> Result<bool> {
        Ok(self.difference(other)?.min_eigenvalue() >= -tol)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.amax()
    }
}

/// Split of the labels of an information matrix into those of interest and
/// nuisance parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SubvectorSelection {
    kept: Vec<String>,
    nuisance: Vec<String>,
}

impl SubvectorSelection {
    pub fn new(kept: Vec<String>, nuisance: Vec<String>) -> Result<Self> {
        if kept.is_empty() {
            return Err(Error::Settings(
                "at least one parameter of interest is required".into(),
            ));
        }
        let all: Vec<&String> = kept.iter().chain(&nuisance).collect();
        for (i, l) in all.iter().enumerate() {
            if all[..i].contains(l) {
                return Err(Error::Settings(format!("label `{l}` selected twice")));
            }
        }
        Ok(Self { kept, nuisance })
    }

    /// Everything except the volatility parameter is of interest; the
    /// volatility parameter is the nuisance.
    pub fn excluding_volatility(model: &Model) -> Self {
        let part = model.partition();
        Self {
            kept: part.non_volatility_labels(),
            nuisance: vec![part.names()[part.volatility_index()].clone()],
        }
    }

    pub fn from_strs(kept: &[&str], nuisance: &[&str]) -> Result<Self> {
        Self::new(
            kept.iter().map(|s| s.to_string()).collect(),
            nuisance.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn kept(&self) -> &[String] {
        &self.kept
    }

    pub fn nuisance(&self) -> &[String] {
        &self.nuisance
    }

    /// Kept labels followed by nuisance labels.
    pub fn labels(&self) -> Vec<String> {
        self.kept.iter().chain(&self.nuisance).cloned().collect()
    }

    /// Labels exist in `model`; those left out are treated as known.
    pub fn validate_for(&self, model: &Model) -> Result<()> {
        for l in self.kept.iter().chain(&self.nuisance) {
            if model.partition().index_of(l).is_none() {
                return Err(Error::UnknownParameter(l.clone()));
            }
        }
        Ok(())
    }

    pub fn covers_all(&self, model: &Model) -> bool {
        self.kept.len() + self.nuisance.len() == model.partition().len()
    }
}

/// Result of a Schur complement that may have used a pseudo-inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct Subvector {
    pub info: InfoMatrix,
    pub used_pseudo_inverse: bool,
}

/// Cross term `I_{I,II} I_{II,II}^{-1} I_{II,I}` and whether the nuisance
/// block had to be pseudo-inverted.
fn nuisance_correction(
    fim: &InfoMatrix,
    sel: &SubvectorSelection,
    allow_pinv: bool,
) -> Result<(DMatrix<f64>, bool)> {
    let ki: Vec<usize> = sel
        .kept
        .iter()
        .map(|l| {
            fim.index_of(l)
                .ok_or_else(|| Error::UnknownParameter(l.clone()))
        })
        .collect::<Result<_>>()?;
    let ni: Vec<usize> = sel
        .nuisance
        .iter()
        .map(|l| {
            fim.index_of(l)
                .ok_or_else(|| Error::UnknownParameter(l.clone()))
        })
        .collect::<Result<_>>()?;
    if ki.len() + ni.len() != fim.dim() {
        return Err(Error::Dimension(
            "selection must partition the labels of the information matrix".into(),
        ));
    }
    let (k, q) = (ki.len(), ni.len());
    if q == 0 {
        return Ok((DMatrix::zeros(k, k), false));
    }
    let e = fim.matrix();
    let cross = DMatrix::from_fn(k, q, |i, j| e[(ki[i], ni[j])]);
    let nuis = DMatrix::from_fn(q, q, |i, j| e[(ni[i], ni[j])]);
    let eig = SymmetricEigen::new(nuis);
    let lmax = eig.eigenvalues.iter().copied().fold(0.0_f64, f64::max);
    let lmin = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let cutoff = 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let singular = !(lmin > cutoff);
    if singular && !allow_pinv {
        return Err(Error::SingularNuisance {
            min_eigenvalue: lmin,
        });
    }
    let inv_vals = eig
        .eigenvalues
        .map(|l| if l > cutoff { 1.0 / l } else { 0.0 });
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let corr = &cross * inv * cross.transpose();
    Ok(((&corr + corr.transpose()) * 0.5, singular))
}

/// Information about the kept parameters with the nuisance ones profiled
/// out (Schur complement). Rejects a singular nuisance block.
pub fn fim_subvector(fim: &InfoMatrix, sel: &SubvectorSelection) -> Result<InfoMatrix> {
    fim_subvector_with(fim, sel, false).map(|s| s.info)
}

/// Like [`fim_subvector`], optionally pseudo-inverting a singular nuisance
/// block; the result records whether that happened.
pub fn fim_subvector_with(
    fim: &InfoMatrix,
    sel: &SubvectorSelection,
    allow_pseudo_inverse: bool,
) -> Result<Subvector> {
    let (corr, used) = nuisance_correction(fim, sel, allow_pseudo_inverse)?;
    let kept = fim.block(&sel.kept)?;
    let info = InfoMatrix {
        labels: kept.labels,
        entries: kept.entries - corr,
    };
    Ok(Subvector {
        info,
        used_pseudo_inverse: used,
    })
}

/// Max-abs entry of the nuisance correction `I_{I,II} I_{II,II}^{-1} I_{II,I}`.
pub fn nuisance_cross_term(fim: &InfoMatrix, sel: &SubvectorSelection) -> Result<f64> {
    Ok(nuisance_correction(fim, sel, false)?.0.amax())
}

fn outer_add(m: &mut DMatrix<f64>, x: &[f64], y: &[f64], w: f64) {
    for i in 0..x.len() {
        for j in 0..y.len() {
            m[(i, j)] += w * x[i] * y[j];
        }
    }
}

/// Exact information of a design.
pub fn fim_exact(model: &Model, theta: &[f64], design: &SamplingDesign) -> Result<InfoMatrix> {
    fim_exact_times(model, theta, design.times(), &QuadratureSettings::default())
}

pub(crate) fn fim_exact_times(
    model: &Model,
    theta: &[f64],
    times: &[f64],
    settings: &QuadratureSettings,
) -> Result<InfoMatrix> {
    let n = times.len();
    if n > DENSE_CAP {
        return Err(Error::TooLarge { n, cap: DENSE_CAP });
    }
    let m = model.partition().len();
    let eng = MomentEngine::new(model, theta, *settings);
    let pc = product_factors_with(model, theta, times, settings)?;

    // dE[j][i] = d E[X(t_i)] / d theta_j
    let mut de = vec![vec![0.0; n]; m];
    for (i, &t) in times.iter().enumerate() {
        for (j, g) in eng.mean_gradient(t)?.into_iter().enumerate() {
            de[j][i] = g;
        }
    }
    let mut info = DMatrix::zeros(m, m);
    for a in 0..m {
        for b in a..m {
            let q = quad_form_inverse(&pc, &de[a], &de[b])?;
            info[(a, b)] = q;
            info[(b, a)] = q;
        }
    }

    let (du, dv) = product_factor_gradients(&eng, times, &pc)?;
    let active: Vec<usize> = (0..m)
        .filter(|&j| du[j].iter().chain(&dv[j]).any(|&x| x != 0.0))
        .collect();
    if !active.is_empty() {
        let sigma = pc.dense()?;
        let chol = sigma
            .cholesky()
            .ok_or_else(|| Error::DegenerateDesign("covariance is not positive definite".into()))?;
        let (u, v) = (pc.u(), pc.v());
        let solved: Vec<DMatrix<f64>> = active
            .iter()
            .map(|&j| {
                let ds = DMatrix::from_fn(n, n, |r, c| {
                    let (lo, hi) = if r <= c { (r, c) } else { (c, r) };
                    du[j][lo] * v[hi] + u[lo] * dv[j][hi]
                });
                chol.solve(&ds)
            })
            .collect();
        for (x, &a) in active.iter().enumerate() {
            for (y, &b) in active.iter().enumerate().skip(x) {
                // tr(P_a P_b) = sum_ik P_a[i,k] P_b[k,i]
                let tr = solved[x].component_mul(&solved[y].transpose()).sum();
                info[(a, b)] += 0.5 * tr;
                if a != b {
                    info[(b, a)] += 0.5 * tr;
                }
            }
        }
    }
    if info.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite {
            what: "exact information",
            t: f64::NAN,
        });
    }
    InfoMatrix::new(model.labels().to_vec(), info)
}

/// Information contained in the single observation `X(t)`.
pub(crate) fn marginal_info(eng: &MomentEngine<'_>, t: f64) -> Result<DMatrix<f64>> {
    let m = eng.model().partition().len();
    let de = eng.mean_gradient(t)?;
    let v = eng.variance(t)?;
    let dv = eng.variance_gradient(t)?;
    if !(v > 0.0) {
        return Err(Error::DegenerateDesign(format!(
            "V[X({t})] is not positive"
        )));
    }
    let dl: Vec<f64> = dv.iter().map(|d| d / v).collect();
    let mut out = DMatrix::zeros(m, m);
    outer_add(&mut out, &de, &de, 1.0 / v);
    outer_add(&mut out, &dl, &dl, 0.5);
    Ok(out)
}

fn transition_info(eng: &MomentEngine<'_>, s: f64, t: f64) -> Result<DMatrix<f64>> {
    if s == 0.0 {
        // X(0) is the fixed initial value, so the first transition is the
        // marginal law of X(t), including its dependence on X0.
        return marginal_info(eng, t);
    }
    let m = eng.model().partition().len();
    let tr = eng.transition(s, t)?;
    let phi = tr.phi;
    let (es_grad, et_grad) = (eng.mean_gradient(s)?, eng.mean_gradient(t)?);
    let (vs, vs_grad, vt_grad) = (
        eng.variance(s)?,
        eng.variance_gradient(s)?,
        eng.variance_gradient(t)?,
    );
    let (bs_grad, bt_grad) = (
        eng.antiderivative_gradient(s)?,
        eng.antiderivative_gradient(t)?,
    );

    let dphi: Vec<f64> = (0..m).map(|j| phi * (bt_grad[j] - bs_grad[j])).collect();
    // Derivative of the conditional mean, averaged over X(s).
    let g: Vec<f64> = (0..m).map(|j| et_grad[j] - phi * es_grad[j]).collect();
    let vc = tr.variance;
    let dvc: Vec<f64> = (0..m)
        .map(|j| vt_grad[j] - 2.0 * phi * dphi[j] * vs - phi * phi * vs_grad[j])
        .collect();
    let dl: Vec<f64> = dvc.iter().map(|d| d / vc).collect();

    let mut out = DMatrix::zeros(m, m);
    outer_add(&mut out, &g, &g, 1.0 / vc);
    outer_add(&mut out, &dphi, &dphi, vs / vc);
    outer_add(&mut out, &dl, &dl, 0.5);
    Ok(out)
}

/// `E_{X(s)}[ I_{X(t) | X(s)} ]` for `0 <= s < t`.
pub fn expected_conditional_fim(
    model: &Model,
    theta: &[f64],
    s: f64,
    t: f64,
) -> Result<InfoMatrix> {
    if !(s >= 0.0 && s < t) {
        return Err(Error::Ordering(format!("0 <= s < t, got s = {s}, t = {t}")));
    }
    let eng = MomentEngine::with_defaults(model, theta);
    InfoMatrix::new(model.labels().to_vec(), transition_info(&eng, s, t)?)
}

/// Information of a design as the sum over its Markov transitions.
pub fn fim_markov_sum(model: &Model, theta: &[f64], design: &SamplingDesign) -> Result<InfoMatrix> {
    let eng = MomentEngine::with_defaults(model, theta);
    let times = design.times();
    let mut total = transition_info(&eng, 0.0, times[0])?;
    for w in times.windows(2) {
        total += transition_info(&eng, w[0], w[1])?;
    }
    InfoMatrix::new(model.labels().to_vec(), total)
}

/// Information about `X0` when it is the only unknown:
/// `(∫_0^{t1} e^{2[B(0)-B(v)]} sigma^2(v) dv)^{-1}`.
pub fn info_x0_only(model: &Model, theta: &[f64], t1: f64) -> Result<f64> {
    let part = model.partition();
    let x0 = part
        .initial_index()
        .ok_or_else(|| Error::Unsupported("X0 is not a parameter of this model".into()))?;
    if !(t1 > 0.0) {
        return Err(Error::Ordering(format!("t1 > 0, got {t1}")));
    }
    let drift_dep = coefficient_partials(model, t1, theta)?.a[x0];
    if drift_dep != 0.0 {
        return Err(Error::Unsupported(
            "X0 enters the drift; the first-time formula does not apply".into(),
        ));
    }
    debug_assert_eq!(part.roles()[x0], Role::Initial);
    let eng = MomentEngine::with_defaults(model, theta);
    let scaled_var = integrate(
        |v| {
            let s2 = model.sigma_sq(v, theta)?;
            Ok((-2.0 * eng.antiderivative(v)?).exp() * s2)
        },
        0.0,
        t1,
        &QuadratureSettings::default(),
    )?;
    Ok(1.0 / scaled_var)
}

/// The first design time is all that matters for `X0`, and its information
/// decreases in `t1`, so the earliest admissible time is optimal.
pub fn optimal_t1_for_x0(domain: &Domain) -> f64 {
    domain.lo()
}

fn check_counterexample(theta2: f64, theta3: f64) -> Result<()> {
    if !(theta2 > 0.0) {
        return Err(Error::out_of_range("theta2", "must be positive"));
    }
    if !(theta3 > 0.0) {
        return Err(Error::out_of_range("theta3", "must be positive"));
    }
    Ok(())
}

/// Information about `X0` from one observation at `t` in the counterexample
/// model: `(theta2 - theta3) / (e^{-theta3 t} - e^{-theta2 t})`.
pub fn counterexample_info(theta2: f64, theta3: f64, t: f64) -> Result<f64> {
    check_counterexample(theta2, theta3)?;
    if !(t > 0.0) {
        return Err(Error::Ordering(format!("t > 0, got {t}")));
    }
    let d = theta2 - theta3;
    // 1/V with V = e^{-theta2 t} (e^{d t} - 1)/d, written to survive d -> 0.
    let ratio = if d == 0.0 { t } else { (d * t).exp_m1() / d };
    Ok((theta2 * t).exp() / ratio)
}

/// Minimiser of [`counterexample_info`] over `t > 0`:
/// `(ln theta2 - ln theta3) / (theta2 - theta3)`, or `1/theta2` when equal.
pub fn counterexample_tmin(theta2: f64, theta3: f64) -> Result<f64> {
    check_counterexample(theta2, theta3)?;
    let d = theta2 - theta3;
    if d == 0.0 {
        return Ok(1.0 / theta2);
    }
    Ok((d / theta3).ln_1p() / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_builtin_model, make_builtin_model_with, BuiltinModel, ModelOptions};
    use std::collections::BTreeMap;

    fn p(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn gompertz(rho: f64, delta: f64, gamma: f64) -> Model {
        make_builtin_model(
            BuiltinModel::GompertzLog,
            &p(&[
                ("rho", rho),
                ("delta", delta),
                ("gamma", gamma),
                ("Y0", 1.0),
            ]),
        )
        .unwrap()
    }

    fn dom() -> Domain {
        Domain::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn single_point_rho_information() {
        let m = gompertz(1.0, 1.0, 1.0);
        let d = SamplingDesign::new(vec![1.0], dom()).unwrap();
        let f = fim_exact(&m, m.nominal(), &d).unwrap();
        let expected = 0.632_120_558_828_557_7_f64.powi(2) / 0.432_332_358_381_693_6;
        assert!((f.get("rho", "rho").unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.92423).abs() < 1e-5);
    }

    #[test]
    fn mean_only_parameter_has_no_trace_term() {
        let m = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &p(&[("theta1", 0.5), ("theta3", 1.0)]),
        )
        .unwrap();
        let d = SamplingDesign::new(vec![1.0, 1.5, 2.0], dom()).unwrap();
        let f = fim_exact(&m, m.nominal(), &d).unwrap();
        // dE/dtheta1 = t, Sigma = min(s,t): information = t_n / theta3^2 = 2.
        assert!((f.get("theta1", "theta1").unwrap() - 2.0).abs() < 1e-12);
        assert!(f.get("theta1", "theta3").unwrap().abs() < 1e-12);
    }

    #[test]
    fn schur_by_hand() {
        let f = InfoMatrix::new(
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 1.0]),
        )
        .unwrap();
        let sel = SubvectorSelection::from_strs(&["a"], &["b"]).unwrap();
        assert!((fim_subvector(&f, &sel).unwrap().matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn block_diagonal_schur_is_block() {
        let f = InfoMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let sel = SubvectorSelection::from_strs(&["a", "b"], &["c"]).unwrap();
        let s = fim_subvector(&f, &sel).unwrap();
        assert_eq!(s, f.block(&["a".into(), "b".into()]).unwrap());
    }

    #[test]
    fn singular_nuisance_requires_opt_in() {
        let f = InfoMatrix::new(
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let sel = SubvectorSelection::from_strs(&["a"], &["b"]).unwrap();
        assert!(matches!(
            fim_subvector(&f, &sel),
            Err(Error::SingularNuisance { .. })
        ));
        let s = fim_subvector_with(&f, &sel, true).unwrap();
        assert!(s.used_pseudo_inverse);
        assert_eq!(s.info.matrix()[(0, 0)], 2.0);
    }

    #[test]
    fn asymmetric_rejected() {
        let r = InfoMatrix::new(
            vec!["a".into(), "b".into()],
            DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.2, 1.0]),
        );
        assert!(matches!(r, Err(Error::Asymmetric(_))));
    }

    #[test]
    fn schur_dominated_by_block_gompertz() {
        let m = gompertz(1.0, 1.0, 1.0);
        let d = SamplingDesign::new(vec![1.0, 1.25, 1.5, 1.75, 2.0], dom()).unwrap();
        let f = fim_exact(&m, m.nominal(), &d).unwrap();
        let sel = SubvectorSelection::from_strs(&["rho", "delta"], &["gamma"]).unwrap();
        let s = fim_subvector(&f, &sel).unwrap();
        let b = f.block(sel.kept()).unwrap();
        assert!(b.loewner_dominates(&s, 1e-9).unwrap());
    }

    #[test]
    fn markov_sum_matches_exact() {
        let m = gompertz(1.0, 1.0, 1.0);
        let d = SamplingDesign::new(vec![1.0, 1.5, 2.0], dom()).unwrap();
        let a = fim_exact(&m, m.nominal(), &d).unwrap();
        let b = fim_markov_sum(&m, m.nominal(), &d).unwrap();
        let rel = a.difference(&b).unwrap().max_abs() / a.max_abs();
        assert!(rel < 1e-9, "rel {rel}");
    }

    #[test]
    fn markov_single_point_is_first_transition() {
        let m = gompertz(2.0, 0.5, 1.5);
        let d = SamplingDesign::new(vec![1.3], dom()).unwrap();
        let a = fim_markov_sum(&m, m.nominal(), &d).unwrap();
        let b = expected_conditional_fim(&m, m.nominal(), 0.0, 1.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn conditional_info_volatility_lower_bound() {
        let m = gompertz(1.0, 1.0, 1.0);
        let th = m.nominal();
        let f = expected_conditional_fim(&m, th, 1.0, 2.0).unwrap();
        // sigma^2 = gamma^2 and the transition variance is proportional to
        // gamma^2, so d ln V / d gamma = 2 / gamma exactly.
        let bound = 0.5 * 4.0;
        let gg = f.get("gamma", "gamma").unwrap();
        assert!(gg >= bound - 1e-12);
    }

    #[test]
    fn conditional_info_mean_only_entry() {
        let m = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &p(&[("theta1", 0.4), ("theta3", 1.3)]),
        )
        .unwrap();
        let f = expected_conditional_fim(&m, m.nominal(), 1.2, 1.9).unwrap();
        let lag: f64 = 0.7;
        let expected = lag * lag / (1.69 * lag);
        assert!((f.get("theta1", "theta1").unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn conditional_info_short_lag_limit() {
        let m = gompertz(1.0, 1.0, 2.0);
        let f = expected_conditional_fim(&m, m.nominal(), 1.0, 1.0 + 1e-5).unwrap();
        assert!(f.get("rho", "rho").unwrap().abs() < 1e-4);
        assert!(f.get("delta", "delta").unwrap().abs() < 1e-4);
        let limit = 0.5 * (2.0 / 2.0_f64).powi(2);
        assert!((f.get("gamma", "gamma").unwrap() - limit).abs() < 1e-4);
        assert!(matches!(
            expected_conditional_fim(&m, m.nominal(), 1.0, 1.0),
            Err(Error::Ordering(_))
        ));
    }

    #[test]
    fn x0_information_closed_form() {
        let m = make_builtin_model_with(
            BuiltinModel::MeanReversionOu,
            &p(&[
                ("theta1", 0.0),
                ("theta2", 1.0),
                ("theta3", 1.0),
                ("X0", 0.0),
            ]),
            ModelOptions { estimate_x0: true },
        )
        .unwrap();
        let i = info_x0_only(&m, m.nominal(), 1.0).unwrap();
        let e2 = (2.0f64).exp();
        assert!((i - 2.0 / (e2 - 1.0)).abs() < 1e-12);
        assert!((i - 0.313_035_3).abs() < 1e-7);
        let mut prev = f64::INFINITY;
        for k in 0..20 {
            let v = info_x0_only(&m, m.nominal(), 1.0 + 0.05 * k as f64).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert_eq!(optimal_t1_for_x0(&dom()), 1.0);
    }

    #[test]
    fn x0_information_matches_exact_fim_entry() {
        let m = make_builtin_model_with(
            BuiltinModel::MeanReversionOu,
            &p(&[
                ("theta1", 0.3),
                ("theta2", 1.4),
                ("theta3", 0.8),
                ("X0", 0.2),
            ]),
            ModelOptions { estimate_x0: true },
        )
        .unwrap();
        let d = SamplingDesign::new(vec![1.1, 1.4, 1.9], dom()).unwrap();
        let f = fim_exact(&m, m.nominal(), &d).unwrap();
        let i = info_x0_only(&m, m.nominal(), 1.1).unwrap();
        assert!((f.get("X0", "X0").unwrap() - i).abs() < 1e-10 * i);
        // Later points do not matter.
        let d2 = SamplingDesign::new(vec![1.1, 1.2, 1.3, 1.35], dom()).unwrap();
        let f2 = fim_exact(&m, m.nominal(), &d2).unwrap();
        assert!((f2.get("X0", "X0").unwrap() - i).abs() < 1e-10 * i);
    }

    #[test]
    fn x0_not_parameter_is_rejected() {
        let m = gompertz(1.0, 1.0, 1.0);
        assert!(matches!(
            info_x0_only(&m, m.nominal(), 1.0),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn counterexample_values() {
        let e = (-1.0f64).exp() - (-2.0f64).exp();
        assert!((counterexample_info(2.0, 1.0, 1.0).unwrap() - 1.0 / e).abs() < 1e-12);
        assert!((counterexample_info(2.0, 1.0, 1.0).unwrap() - 4.30026).abs() < 1e-5);
        assert!((counterexample_tmin(2.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(counterexample_tmin(1.0, 1.0).unwrap(), 1.0);
        // equal-rate branch: 1/(t e^{-theta2 t})
        let t: f64 = 0.7;
        assert!(
            (counterexample_info(1.5, 1.5, t).unwrap() - 1.0 / (t * (-1.5 * t).exp())).abs()
                < 1e-12
        );
        assert!(counterexample_info(1.0, 2.0, 0.0).is_err());
        assert!(counterexample_info(0.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn counterexample_tmin_is_continuous_and_argmin() {
        let a = counterexample_tmin(1.0 + 1e-9, 1.0).unwrap();
        assert!((a - 1.0).abs() < 1e-8);
        for &(t2, t3) in &[(2.0, 1.0), (0.5, 3.0), (1.2, 1.1)] {
            let tm = counterexample_tmin(t2, t3).unwrap();
            let f = |t: f64| counterexample_info(t2, t3, t).unwrap();
            assert!(f(tm) <= f(tm * 1.01) && f(tm) <= f(tm * 0.99));
        }
    }

    #[test]
    fn counterexample_model_matches_formula() {
        let m = make_builtin_model(
            BuiltinModel::X0Counterexample,
            &p(&[("theta2", 2.0), ("theta3", 1.0), ("X0", 0.5)]),
        )
        .unwrap();
        let d = SamplingDesign::new(vec![1.0], dom()).unwrap();
        let f = fim_exact(&m, m.nominal(), &d).unwrap();
        let i = counterexample_info(2.0, 1.0, 1.0).unwrap();
        assert!((f.get("X0", "X0").unwrap() - i).abs() < 1e-10 * i);
        assert!(info_x0_only(&m, m.nominal(), 1.0).is_err());
    }
}
