//! Information functions and the ultimate efficiency of a design.
//!
//! All three criteria are positively homogeneous of degree one, so the
//! ratio of a design's information to the trajectory information does not
//! depend on how either matrix is scaled.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotic::{fim_asymptotic, AsymptoticInfo};
use crate::covariance::SamplingDesign;
use crate::design::equidistant_design;
use crate::error::{Error, Result};
use crate::fisher::{
    fim_exact, fim_subvector, nuisance_cross_term, InfoMatrix, SubvectorSelection,
};
use crate::model::{Domain, Model};
use crate::quadrature::QuadratureSettings;

/// Eigenvalues below this fraction of the largest one count as zero.
const RANK_TOL: f64 = 1e-13;
/// Negative eigenvalues beyond this (relative) are a caller error.
const NND_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Criterion {
    D,
    E,
    A,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::D, Criterion::E, Criterion::A];

    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::D => "D",
            Criterion::E => "E",
            Criterion::A => "A",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "D" | "d" => Ok(Criterion::D),
            "E" | "e" => Ok(Criterion::E),
            "A" | "a" => Ok(Criterion::A),
            other => Err(Error::Settings(format!(
                "unknown criterion `{other}` (expected D, E or A)"
            ))),
        }
    }
}

/// `Φ_D = det^{1/k}`, `Φ_E = λ_min`, `Φ_A = k / tr(M^{-1})`; all zero on
/// singular input.
pub fn criterion_value(m: &InfoMatrix, c: Criterion) -> Result<f64> {
    let k = m.dim();
    if k == 0 {
        return Err(Error::Dimension("criterion of an empty matrix".into()));
    }
    let ev = m.eigenvalues();
    let lmax = ev[k - 1];
    let lmin = ev[0];
    if lmin < -NND_TOL * (1.0 + lmax.abs()) {
        return Err(Error::Consistency(format!(
            "information matrix is not nonnegative definite (λ_min = {lmin:e})"
        )));
    }
    if !(lmax > 0.0) || lmin <= RANK_TOL * lmax {
        return Ok(0.0);
    }
    Ok(match c {
        Criterion::D => (ev.iter().map(|l| l.ln()).sum::<f64>() / k as f64).exp(),
        Criterion::E => lmin,
        Criterion::A => k as f64 / ev.iter().map(|l| 1.0 / l).sum::<f64>(),
    })
}

/// `Φ[num] / Φ[den]`.
pub fn efficiency_ratio(num: &InfoMatrix, den: &InfoMatrix, c: Criterion) -> Result<f64> {
    let d = criterion_value(den, c)?;
    if !(d > 0.0) {
        return Err(Error::CriterionDegenerate(format!(
            "{c}-criterion of the trajectory information is zero"
        )));
    }
    Ok(criterion_value(num, c)? / d)
}

/// Profiled information `I_I(tau)` about the kept labels, treating labels
/// outside the selection as known.
pub fn subvector_information(
    model: &Model,
    theta: &[f64],
    design: &SamplingDesign,
    sel: &SubvectorSelection,
) -> Result<InfoMatrix> {
    sel.validate_for(model)?;
    let full = fim_exact(model, theta, design)?;
    fim_subvector(&full.block(&sel.labels())?, sel)
}

/// Precomputed trajectory information for repeated efficiency evaluation.
#[derive(Debug, Clone)]
pub struct EfficiencyContext<'m> {
    model: &'m Model,
    theta: Vec<f64>,
    sel: SubvectorSelection,
    asymptotic: AsymptoticInfo,
    reference: InfoMatrix,
}

impl<'m> EfficiencyContext<'m> {
    pub fn new(
        model: &'m Model,
        theta: &[f64],
        domain: &Domain,
        sel: SubvectorSelection,
    ) -> Result<Self> {
        sel.validate_for(model)?;
        let asymptotic = fim_asymptotic(model, theta, domain, &QuadratureSettings::default())?;
        let reference = asymptotic.i_inf.block(sel.kept())?;
        if !reference.max_eigenvalue().is_finite() {
            return Err(Error::CriterionDegenerate(
                "trajectory information has an infinite eigenvalue".into(),
            ));
        }
        Ok(Self {
            model,
            theta: theta.to_vec(),
            sel,
            asymptotic,
            reference,
        })
    }

    pub fn asymptotic(&self) -> &AsymptoticInfo {
        &self.asymptotic
    }

    /// `{I_inf}` restricted to the kept labels.
    pub fn reference(&self) -> &InfoMatrix {
        &self.reference
    }

    pub fn selection(&self) -> &SubvectorSelection {
        &self.sel
    }

    pub fn subvector_information(&self, design: &SamplingDesign) -> Result<InfoMatrix> {
        subvector_information(self.model, &self.theta, design, &self.sel)
    }

    pub fn ueff(&self, design: &SamplingDesign, c: Criterion) -> Result<f64> {
        efficiency_ratio(&self.subvector_information(design)?, &self.reference, c)
    }

    /// Efficiencies for several criteria from one information evaluation.
    pub fn ueff_many(&self, design: &SamplingDesign, cs: &[Criterion]) -> Result<Vec<f64>> {
        let info = self.subvector_information(design)?;
        cs.iter()
            .map(|&c| efficiency_ratio(&info, &self.reference, c))
            .collect()
    }
}

pub fn ultimate_efficiency(
    model: &Model,
    theta: &[f64],
    design: &SamplingDesign,
    sel: &SubvectorSelection,
    c: Criterion,
) -> Result<f64> {
    EfficiencyContext::new(model, theta, &design.domain(), sel.clone())?.ueff(design, c)
}

/// One row of an efficiency curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRow {
    pub n: usize,
    /// In the order of the requested criteria.
    pub values: Vec<f64>,
}

/// Efficiencies of equidistant designs for each `n`, computed in parallel
/// and returned in input order.
pub fn efficiency_curve(
    model: &Model,
    theta: &[f64],
    domain: &Domain,
    sel: &SubvectorSelection,
    ns: &[usize],
    criteria: &[Criterion],
) -> Result<Vec<EfficiencyRow>> {
    let ctx = EfficiencyContext::new(model, theta, domain, sel.clone())?;
    ns.par_iter()
        .map(|&n| {
            let d = equidistant_design(domain, n)?;
            Ok(EfficiencyRow {
                n,
                values: ctx.ueff_many(&d, criteria)?,
            })
        })
        .collect()
}

/// Max-abs entry of the nuisance correction for equidistant designs along
/// an increasing ladder of sizes.
pub fn condition11_diagnostic(
    model: &Model,
    theta: &[f64],
    domain: &Domain,
    sel: &SubvectorSelection,
    n_ladder: &[usize],
) -> Result<Vec<f64>> {
    if n_ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Settings("ladder must be strictly increasing".into()));
    }
    sel.validate_for(model)?;
    n_ladder
        .iter()
        .map(|&n| {
            let d = equidistant_design(domain, n)?;
            let full = fim_exact(model, theta, &d)?.block(&sel.labels())?;
            nuisance_cross_term(&full, sel)
        })
        .collect()
}
