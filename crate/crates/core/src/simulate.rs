//! Exact-transition sampling, Gaussian maximum likelihood and Monte-Carlo
//! checks of the Cramér–Rao bound.
//!
//! Replication `r` of a study draws from a ChaCha8 stream `r` of the master
//! seed, so results do not depend on scheduling or thread count.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{product_factors_with, quad_form_inverse, SamplingDesign};
use crate::efficiency::subvector_information;
use crate::error::{Error, Result};
use crate::fisher::{fim_exact, SubvectorSelection};
use crate::model::{Model, ParameterVector};
use crate::moments::MomentEngine;
use crate::quadrature::QuadratureSettings;

/// Gaussian transitions `X(t_i) = phi_i X(t_{i-1}) + offset_i + sd_i Z_i`
/// from `X(0) = X0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionPlan {
    x0: f64,
    steps: Vec<(f64, f64, f64)>,
}

impl TransitionPlan {
    pub fn new(model: &Model, theta: &[f64], design: &SamplingDesign) -> Result<Self> {
        let eng = MomentEngine::with_defaults(model, theta);
        let mut prev = 0.0;
        let mut steps = Vec::with_capacity(design.len());
        for &t in design.times() {
            let tr = eng.transition(prev, t)?;
            steps.push((tr.phi, tr.offset, tr.variance.max(0.0).sqrt()));
            prev = t;
        }
        Ok(Self {
            x0: model.initial_value(theta),
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut x = self.x0;
        self.steps
            .iter()
            .map(|&(phi, off, sd)| {
                let z: f64 = StandardNormal.sample(rng);
                x = phi * x + off + sd * z;
                x
            })
            .collect()
    }
}

pub fn sample_path(
    model: &Model,
    theta: &[f64],
    design: &SamplingDesign,
    seed: u64,
) -> Result<Vec<f64>> {
    let plan = TransitionPlan::new(model, theta, design)?;
    Ok(plan.sample(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Gaussian log-likelihood of `data` at the design times, evaluated in
/// O(n) through the product covariance.
pub fn log_likelihood(
    model: &Model,
    theta: &[f64],
    design: &SamplingDesign,
    data: &[f64],
) -> Result<f64> {
    let n = design.len();
    if data.len() != n {
        return Err(Error::Dimension(format!(
            "{} observations for {n} times",
            data.len()
        )));
    }
    let settings = QuadratureSettings::default();
    let eng = MomentEngine::new(model, theta, settings);
    let resid = design
        .times()
        .iter()
        .zip(data)
        .map(|(&t, &x)| Ok(x - eng.mean(t)?))
        .collect::<Result<Vec<f64>>>()?;
    let pc = product_factors_with(model, theta, design.times(), &settings)?;
    let q = quad_form_inverse(&pc, &resid, &resid)?;
    let ld = pc.log_det()?;
    Ok(-0.5 * (q + ld + n as f64 * (2.0 * std::f64::consts::PI).ln()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NelderMeadSettings {
    pub max_iterations: usize,
    /// Simplex size below which the search stops, relative to `1 + |x|`.
    pub x_tol: f64,
    pub f_tol: f64,
}

impl Default for NelderMeadSettings {
    fn default() -> Self {
        Self {
            max_iterations: 2000,
            x_tol: 1e-8,
            f_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds) {
        // Open bounds: stay a relative hair inside.
        let lo_in = if lo.is_finite() {
            lo + 1e-12 * lo.abs().max(1.0)
        } else {
            lo
        };
        let hi_in = if hi.is_finite() {
            hi - 1e-12 * hi.abs().max(1.0)
        } else {
            hi
        };
        *v = v.clamp(lo_in, hi_in);
    }
}

/// Minimises `f` over the box `bounds`. Trial points are projected into
/// the box; failed evaluations count as `+inf`.
pub fn nelder_mead<F>(
    mut f: F,
    x0: &[f64],
    bounds: &[(f64, f64)],
    settings: &NelderMeadSettings,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
{
    let k = x0.len();
    let mut eval = |x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(k + 1);
    let mut start = x0.to_vec();
    project(&mut start, bounds);
    simplex.push(start.clone());
    for i in 0..k {
        let mut v = start.clone();
        v[i] += if v[i] != 0.0 { 0.05 * v[i] } else { 2.5e-4 };
        project(&mut v, bounds);
        if v[i] == start[i] {
            v[i] -= if start[i] != 0.0 {
                0.05 * start[i]
            } else {
                2.5e-4
            };
            project(&mut v, bounds);
        }
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|x| eval(x)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < settings.max_iterations {
        let mut order: Vec<usize> = (0..=k).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        fv = order.iter().map(|&i| fv[i]).collect();

        let best = &simplex[0];
        let size = simplex[1..]
            .iter()
            .flat_map(|v| {
                v.iter()
                    .zip(best)
                    .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            })
            .fold(0.0_f64, f64::max);
        let fspread = (fv[k] - fv[0]).abs();
        if size <= settings.x_tol && fspread <= settings.f_tol * (1.0 + fv[0].abs()) {
            converged = true;
            break;
        }
        iterations += 1;

        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|v| v[j]).sum::<f64>() / k as f64)
            .collect();
        let along = |c: f64| {
            let mut p: Vec<f64> = (0..k)
                .map(|j| centroid[j] + c * (simplex[k][j] - centroid[j]))
                .collect();
            project(&mut p, bounds);
            p
        };
        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < fv[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                simplex[k] = xe;
                fv[k] = fe;
            } else {
                simplex[k] = xr;
                fv[k] = fr;
            }
            continue;
        }
        if fr < fv[k - 1] {
            simplex[k] = xr;
            fv[k] = fr;
            continue;
        }
        let (xc, fc) = if fr < fv[k] {
            let x = along(-0.5);
            let v = eval(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = eval(&x);
            (x, v)
        };
        if fc < fv[k].min(fr) {
            simplex[k] = xc;
            fv[k] = fc;
            continue;
        }
        // Shrink toward the best vertex.
        for i in 1..=k {
            let mut p: Vec<f64> = (0..k)
                .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                .collect();
            project(&mut p, bounds);
            fv[i] = eval(&p);
            simplex[i] = p;
        }
    }
    let ib = (0..=k)
        .min_by(|&a, &b| fv[a].total_cmp(&fv[b]))
        .unwrap_or(0);
    NelderMeadResult {
        x: simplex[ib].clone(),
        value: fv[ib],
        iterations,
        converged,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MleFit {
    pub theta: ParameterVector,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit before the tolerances.
    pub converged: bool,
}

/// Maximum-likelihood fit of the labels in `free`, holding the others at
/// their values in `theta_init`.
pub fn mle_fit(
    model: &Model,
    design: &SamplingDesign,
    data: &[f64],
    theta_init: &[f64],
    free: &[String],
) -> Result<MleFit> {
    mle_fit_with(
        model,
        design,
        data,
        theta_init,
        free,
        &NelderMeadSettings::default(),
    )
}

pub fn mle_fit_with(
    model: &Model,
    design: &SamplingDesign,
    data: &[f64],
    theta_init: &[f64],
    free: &[String],
    settings: &NelderMeadSettings,
) -> Result<MleFit> {
    model.check_bounds(theta_init)?;
    if free.is_empty() {
        return Err(Error::Settings("no free parameters to fit".into()));
    }
    if design.len() < free.len() {
        return Err(Error::Design(format!(
            "{} observations cannot identify {} free parameters",
            design.len(),
            free.len()
        )));
    }
    let idx = free
        .iter()
        .map(|l| {
            model
                .partition()
                .index_of(l)
                .ok_or_else(|| Error::UnknownParameter(l.clone()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let all_bounds = model.bounds();
    let bounds: Vec<(f64, f64)> = idx.iter().map(|&i| all_bounds[i]).collect();
    let x0: Vec<f64> = idx.iter().map(|&i| theta_init[i]).collect();
    let mut theta = theta_init.to_vec();
    let objective = |x: &[f64]| {
        let mut th = theta_init.to_vec();
        for (&i, &v) in idx.iter().zip(x) {
            th[i] = v;
        }
        match log_likelihood(model, &th, design, data) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };
    let res = nelder_mead(objective, &x0, &bounds, settings);
    for (&i, &v) in idx.iter().zip(&res.x) {
        theta[i] = v;
    }
    if !res.value.is_finite() {
        return Err(Error::Consistency(
            "likelihood is not finite near the start".into(),
        ));
    }
    Ok(MleFit {
        theta: ParameterVector::new(model.partition(), theta)?,
        log_likelihood: -res.value,
        iterations: res.iterations,
        converged: res.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub replications: usize,
    pub seed: u64,
    /// Estimated labels: the selection's kept labels followed by nuisance.
    pub labels: Vec<String>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample covariance with divisor `R - 1`, over successful fits.
    pub covariance: Vec<Vec<f64>>,
    /// Inverse of the information restricted to `labels`; its kept block is
    /// the inverse of the profiled information.
    pub crlb: Vec<Vec<f64>>,
    /// `covariance[i][i] / crlb[i][i]`.
    pub variance_ratio: Vec<f64>,
    pub non_converged: usize,
    pub failed: usize,
}

impl McReport {
    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn variance(&self, label: &str) -> Option<f64> {
        self.index_of(label).map(|i| self.covariance[i][i])
    }
}

/// Simulates `replications` paths at `theta_true`, refits the selected
/// labels by maximum likelihood from the truth, and compares the empirical
/// covariance of the estimates with the inverse information.
pub fn mc_crlb_study(
    model: &Model,
    theta_true: &[f64],
    design: &SamplingDesign,
    sel: &SubvectorSelection,
    replications: usize,
    seed: u64,
) -> Result<McReport> {
    if replications < 100 {
        return Err(Error::Settings(format!(
            "at least 100 replications are required, got {replications}"
        )));
    }
    sel.validate_for(model)?;
    model.check_bounds(theta_true)?;
    let labels = sel.labels();
    let restricted = fim_exact(model, theta_true, design)?.block(&labels)?;
    // Fails early if the kept parameters are not identified.
    subvector_information(model, theta_true, design, sel)?;
    let inv = restricted.matrix().clone().try_inverse().ok_or_else(|| {
        Error::DegenerateDesign("information of the free labels is singular".into())
    })?;

    let plan = TransitionPlan::new(model, theta_true, design)?;
    let idx: Vec<usize> = labels
        .iter()
        .map(|l| model.partition().index_of(l).expect("validated"))
        .collect();
    let fits: Vec<Option<(Vec<f64>, bool)>> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let data = plan.sample(&mut rng);
            mle_fit(model, design, &data, theta_true, &labels)
                .ok()
                .map(|f| (idx.iter().map(|&i| f.theta[i]).collect(), f.converged))
        })
        .collect();

    let ok: Vec<&Vec<f64>> = fits.iter().flatten().map(|(x, _)| x).collect();
    let failed = replications - ok.len();
    let non_converged = fits.iter().flatten().filter(|(_, c)| !c).count();
    if ok.len() < 2 {
        return Err(Error::Consistency("fewer than two successful fits".into()));
    }
    let k = labels.len();
    let r = ok.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|j| ok.iter().map(|x| x[j]).sum::<f64>() / r)
        .collect();
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for x in &ok {
        for i in 0..k {
            for j in 0..k {
                cov[(i, j)] += (x[i] - mean[i]) * (x[j] - mean[j]);
            }
        }
    }
    cov /= r - 1.0;
    let to_rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..k)
            .map(|i| (0..k).map(|j| m[(i, j)]).collect())
            .collect()
    };
    Ok(McReport {
        replications,
        seed,
        truth: idx.iter().map(|&i| theta_true[i]).collect(),
        variance_ratio: (0..k).map(|i| cov[(i, i)] / inv[(i, i)]).collect(),
        covariance: to_rows(&cov),
        crlb: to_rows(&inv),
        labels,
        mean,
        non_converged,
        failed,
    })
}
