//! Reduction of nonlinear SDEs `dY = mu(t,Y) dt + sigma(t) g(t,Y) dW` to
//! linear ones through `phi(t,y) = ∫ dy / g(t,y)`.
//!
//! By Itô's lemma `X = phi(t, Y)` has drift
//! `dphi/dt + mu/g - sigma^2/2 dg/dy` and diffusion `sigma(t)`. The SDE is
//! of OU type exactly when that drift is affine in `phi` for every `t`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numdiff::step;
use crate::quadrature::{integrate, QuadratureSettings};

type Coef2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Coef1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Tighter than the defaults: the affinity residual is compared against
/// `1e-6` and inherits the error of `phi`.
const PHI_QUADRATURE: QuadratureSettings = QuadratureSettings {
    abs_tol: 1e-13,
    rel_tol: 1e-12,
    max_subdivisions: 4000,
};

/// Nonlinear SDE with separable diffusion `sigma(t) g(t, y)`.
#[derive(Clone)]
pub struct NonlinearSde {
    name: String,
    mu: Coef2,
    sigma: Coef1,
    g: Coef2,
    dg_dy: Option<Coef2>,
    d2g_dy2: Option<Coef2>,
    dg_dt: Option<Coef2>,
    dmu_dy: Option<Coef2>,
    autonomous: bool,
    y_domain: (f64, f64),
    anchor: f64,
}

impl fmt::Debug for NonlinearSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearSde")
            .field("name", &self.name)
            .field("autonomous", &self.autonomous)
            .field("y_domain", &self.y_domain)
            .field("anchor", &self.anchor)
            .finish_non_exhaustive()
    }
}

impl NonlinearSde {
    /// `y_domain` is an open interval on which `g > 0`; `anchor` is the
    /// point where `phi` vanishes and must lie inside it.
    pub fn new(
        name: impl Into<String>,
        mu: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        sigma: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        y_domain: (f64, f64),
        anchor: f64,
    ) -> Result<Self> {
        if !(y_domain.0 < y_domain.1) {
            return Err(Error::Domain {
                lo: y_domain.0,
                hi: y_domain.1,
            });
        }
        if !(anchor > y_domain.0 && anchor < y_domain.1) {
            return Err(Error::out_of_range(
                "anchor",
                "must lie inside the y-domain",
            ));
        }
        Ok(Self {
            name: name.into(),
            mu: Arc::new(mu),
            sigma: Arc::new(sigma),
            g: Arc::new(g),
            dg_dy: None,
            d2g_dy2: None,
            dg_dt: None,
            dmu_dy: None,
            autonomous: false,
            y_domain,
            anchor,
        })
    }

    /// Declares `mu` and `g` free of `t`.
    pub fn autonomous(mut self) -> Self {
        self.autonomous = true;
        self
    }

    pub fn with_dg_dy(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dg_dy = Some(Arc::new(f));
        self
    }

    pub fn with_d2g_dy2(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.d2g_dy2 = Some(Arc::new(f));
        self
    }

    pub fn with_dg_dt(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dg_dt = Some(Arc::new(f));
        self
    }

    pub fn with_dmu_dy(mut self, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.dmu_dy = Some(Arc::new(f));
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_autonomous(&self) -> bool {
        self.autonomous
    }

    pub fn y_domain(&self) -> (f64, f64) {
        self.y_domain
    }

    pub fn anchor(&self) -> f64 {
        self.anchor
    }

    pub fn mu(&self, t: f64, y: f64) -> f64 {
        (self.mu)(t, y)
    }

    pub fn sigma(&self, t: f64) -> f64 {
        (self.sigma)(t)
    }

    /// `g(t, y)`, rejecting non-positive or non-finite values.
    pub fn g(&self, t: f64, y: f64) -> Result<f64> {
        let v = (self.g)(t, y);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::NonPositiveDiffusion { t, value: v });
        }
        Ok(v)
    }

    fn in_domain(&self, y: f64) -> Result<()> {
        if y > self.y_domain.0 && y < self.y_domain.1 {
            Ok(())
        } else {
            Err(Error::out_of_range(
                "y",
                format!(
                    "{y} is outside the open y-domain ({}, {})",
                    self.y_domain.0, self.y_domain.1
                ),
            ))
        }
    }

    fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = step(x);
        let (xp, xm) = (x + h, x - h);
        (f(xp) - f(xm)) / (xp - xm)
    }

    fn second<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        // Wider step for the second difference: error ~ eps / h^2 + h^2.
        let h = f64::EPSILON.powf(0.25) * x.abs().max(1.0);
        (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
    }

    pub fn dg_dy(&self, t: f64, y: f64) -> f64 {
        match &self.dg_dy {
            Some(f) => f(t, y),
            None => Self::central(|u| (self.g)(t, u), y),
        }
    }

    pub fn d2g_dy2(&self, t: f64, y: f64) -> f64 {
        match &self.d2g_dy2 {
            Some(f) => f(t, y),
            None => Self::second(|u| (self.g)(t, u), y),
        }
    }

    pub fn dg_dt(&self, t: f64, y: f64) -> f64 {
        if self.autonomous {
            return 0.0;
        }
        match &self.dg_dt {
            Some(f) => f(t, y),
            None => Self::central(|s| (self.g)(s, y), t),
        }
    }

    pub fn dmu_dy(&self, t: f64, y: f64) -> f64 {
        match &self.dmu_dy {
            Some(f) => f(t, y),
            None => Self::central(|u| (self.mu)(t, u), y),
        }
    }
}

/// `phi(t, y) = ∫_{y_ref}^{y} du / g(t, u)`.
pub fn transform_phi(sde: &NonlinearSde, t: f64, y: f64, y_ref: f64) -> Result<f64> {
    sde.in_domain(y)?;
    sde.in_domain(y_ref)?;
    integrate(|u| Ok(1.0 / sde.g(t, u)?), y_ref, y, &PHI_QUADRATURE)
}

/// `dphi/dt = -∫_{y_ref}^{y} (dg/dt) / g^2 du`.
fn phi_dt(sde: &NonlinearSde, t: f64, y: f64, y_ref: f64) -> Result<f64> {
    if sde.autonomous {
        return Ok(0.0);
    }
    integrate(
        |u| {
            let g = sde.g(t, u)?;
            Ok(-sde.dg_dt(t, u) / (g * g))
        },
        y_ref,
        y,
        &PHI_QUADRATURE,
    )
}

/// Drift of `X = phi(t, Y)`.
pub fn transformed_drift(sde: &NonlinearSde, t: f64, y: f64, y_ref: f64) -> Result<f64> {
    let g = sde.g(t, y)?;
    let s = sde.sigma(t);
    Ok(phi_dt(sde, t, y, y_ref)? + sde.mu(t, y) / g - 0.5 * s * s * sde.dg_dy(t, y))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffinityReport {
    pub is_ou_type: bool,
    pub t: Vec<f64>,
    /// Fitted `a(t)` per grid time.
    pub a: Vec<f64>,
    /// Fitted `b(t)` per grid time.
    pub b: Vec<f64>,
    pub max_residual: f64,
    /// Residual threshold `1e-6 (1 + max |drift|)`.
    pub threshold: f64,
}

impl AffinityReport {
    /// `(a, b)` when both are constant across the time grid to `tol`.
    pub fn constant_coefficients(&self, tol: f64) -> Option<(f64, f64)> {
        let spread = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        (spread(&self.a) <= tol && spread(&self.b) <= tol).then(|| (self.a[0], self.b[0]))
    }
}

/// Least-squares fit of the transformed drift against `phi` on each time
/// slice, with `phi` anchored at the SDE's anchor point.
pub fn affinity_check(
    sde: &NonlinearSde,
    t_grid: &[f64],
    y_grid: &[f64],
) -> Result<AffinityReport> {
    if t_grid.is_empty() {
        return Err(Error::Settings("t-grid is empty".into()));
    }
    if y_grid.len() < 3 {
        return Err(Error::Settings(format!(
            "y-grid needs at least 3 points, got {}",
            y_grid.len()
        )));
    }
    let y_ref = sde.anchor;
    let mut a = Vec::with_capacity(t_grid.len());
    let mut b = Vec::with_capacity(t_grid.len());
    let mut max_residual: f64 = 0.0;
    let mut max_drift: f64 = 0.0;
    for &t in t_grid {
        let mut phi = Vec::with_capacity(y_grid.len());
        let mut drift = Vec::with_capacity(y_grid.len());
        for &y in y_grid {
            phi.push(transform_phi(sde, t, y, y_ref)?);
            drift.push(transformed_drift(sde, t, y, y_ref)?);
        }
        let k = phi.len() as f64;
        let pm = phi.iter().sum::<f64>() / k;
        let dm = drift.iter().sum::<f64>() / k;
        let sxx: f64 = phi.iter().map(|p| (p - pm) * (p - pm)).sum();
        let sxy: f64 = phi
            .iter()
            .zip(&drift)
            .map(|(p, d)| (p - pm) * (d - dm))
            .sum();
        let spread = phi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            - phi.iter().copied().fold(f64::INFINITY, f64::min);
        if !(spread > 1e-12 * (1.0 + pm.abs())) {
            return Err(Error::DegenerateDesign(format!(
                "phi is constant across the y-grid at t = {t}"
            )));
        }
        let bt = sxy / sxx;
        let at = dm - bt * pm;
        for (p, d) in phi.iter().zip(&drift) {
            max_residual = max_residual.max((d - at - bt * p).abs());
            max_drift = max_drift.max(d.abs());
        }
        a.push(at);
        b.push(bt);
    }
    let threshold = 1e-6 * (1.0 + max_drift);
    Ok(AffinityReport {
        is_ou_type: max_residual <= threshold,
        t: t_grid.to_vec(),
        a,
        b,
        max_residual,
        threshold,
    })
}

/// Max over the grid of `|mu g' + (b - mu') g + sigma^2/2 g^2 g''|` for an
/// autonomous SDE. This is the `y`-derivative of the affinity condition
/// `mu/g - sigma^2/2 g' = a + b phi`, multiplied by `-g`.
pub fn autonomous_ode_residual(
    sde: &NonlinearSde,
    b: f64,
    sigma: f64,
    y_grid: &[f64],
) -> Result<f64> {
    if !sde.autonomous {
        return Err(Error::Unsupported(format!(
            "`{}` is not autonomous",
            sde.name
        )));
    }
    if y_grid.len() < 5 {
        return Err(Error::Settings(format!(
            "y-grid needs at least 5 points for second derivatives, got {}",
            y_grid.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for &y in y_grid {
        sde.in_domain(y)?;
        let g = sde.g(0.0, y)?;
        let r = sde.mu(0.0, y) * sde.dg_dy(0.0, y)
            + (b - sde.dmu_dy(0.0, y)) * g
            + 0.5 * sigma * sigma * g * g * sde.d2g_dy2(0.0, y);
        worst = worst.max(r.abs());
    }
    Ok(worst)
}

/// Natural cubic spline through `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the nodes.
    m: Vec<f64>,
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.len() != n {
            return Err(Error::Dimension(format!(
                "spline needs matching node and value lists of length >= 3, got {} and {}",
                n,
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Ordering(
                "spline nodes must be strictly increasing".into(),
            ));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "spline data",
                t: f64::NAN,
            });
        }
        // Tridiagonal system for the interior second derivatives (Thomas).
        let mut m = vec![0.0; n];
        let k = n - 2;
        let mut diag = vec![0.0; k];
        let mut rhs = vec![0.0; k];
        let mut sub = vec![0.0; k];
        for i in 1..n - 1 {
            let h0 = x[i] - x[i - 1];
            let h1 = x[i + 1] - x[i];
            diag[i - 1] = 2.0 * (h0 + h1);
            sub[i - 1] = h0;
            rhs[i - 1] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
        }
        for i in 1..k {
            let w = sub[i] / diag[i - 1];
            diag[i] -= w * (x[i + 1] - x[i]);
            rhs[i] -= w * rhs[i - 1];
        }
        for i in (0..k).rev() {
            let upper = if i + 1 < k {
                (x[i + 2] - x[i + 1]) * m[i + 2]
            } else {
                0.0
            };
            m[i + 1] = (rhs[i] - upper) / diag[i];
        }
        Ok(Self { x, y, m })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.x[0], self.x[self.x.len() - 1])
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1
    }

    /// Value, first and second derivative at `t`.
    pub fn eval3(&self, t: f64) -> (f64, f64, f64) {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        let v = a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * m0 + (b * b * b - b) * m1) * h * h / 6.0;
        let d = (self.y[i + 1] - self.y[i]) / h
            + ((1.0 - 3.0 * a * a) * m0 + (3.0 * b * b - 1.0) * m1) * h / 6.0;
        let dd = a * m0 + b * m1;
        (v, d, dd)
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.eval3(t).0
    }
}

/// Named nonlinear SDEs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonlinearBuiltin {
    /// `mu = rho y - delta y ln y`, `g = y`, `sigma = gamma`.
    Gompertz,
    /// `mu = c y^2`, `g = 1`, `sigma = s`.
    Quadratic,
    /// `mu = a + b y`, `g = 1`, `sigma = s`.
    Linear,
}

impl NonlinearBuiltin {
    pub fn as_str(self) -> &'static str {
        match self {
            NonlinearBuiltin::Gompertz => "gompertz",
            NonlinearBuiltin::Quadratic => "quadratic",
            NonlinearBuiltin::Linear => "linear",
        }
    }
}

impl FromStr for NonlinearBuiltin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gompertz" => Ok(NonlinearBuiltin::Gompertz),
            "quadratic" => Ok(NonlinearBuiltin::Quadratic),
            "linear" => Ok(NonlinearBuiltin::Linear),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

fn take(params: &BTreeMap<String, f64>, allowed: &[(&str, f64)]) -> Result<Vec<f64>> {
    if let Some(k) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        return Err(Error::UnknownParameter(k.clone()));
    }
    Ok(allowed
        .iter()
        .map(|(k, d)| params.get(*k).copied().unwrap_or(*d))
        .collect())
}

/// Builds a named SDE; unspecified parameters default to 1 (0 for the
/// intercept `a` of `linear`).
pub fn make_nonlinear_builtin(
    kind: NonlinearBuiltin,
    params: &BTreeMap<String, f64>,
) -> Result<NonlinearSde> {
    match kind {
        NonlinearBuiltin::Gompertz => {
            let v = take(params, &[("rho", 1.0), ("delta", 1.0), ("gamma", 1.0)])?;
            let (rho, delta, gamma) = (v[0], v[1], v[2]);
            Ok(NonlinearSde::new(
                "gompertz",
                move |_, y| rho * y - delta * y * y.ln(),
                move |_| gamma,
                |_, y| y,
                (0.0, f64::INFINITY),
                1.0,
            )?
            .autonomous()
            .with_dg_dy(|_, _| 1.0)
            .with_d2g_dy2(|_, _| 0.0)
            .with_dmu_dy(move |_, y| rho - delta * y.ln() - delta))
        }
        NonlinearBuiltin::Quadratic => {
            let v = take(params, &[("c", 1.0), ("s", 1.0)])?;
            let (c, s) = (v[0], v[1]);
            Ok(NonlinearSde::new(
                "quadratic",
                move |_, y| c * y * y,
                move |_| s,
                |_, _| 1.0,
                (f64::NEG_INFINITY, f64::INFINITY),
                0.0,
            )?
            .autonomous()
            .with_dg_dy(|_, _| 0.0)
            .with_d2g_dy2(|_, _| 0.0)
            .with_dmu_dy(move |_, y| 2.0 * c * y))
        }
        NonlinearBuiltin::Linear => {
            let v = take(params, &[("a", 0.0), ("b", -1.0), ("s", 1.0)])?;
            let (a, b, s) = (v[0], v[1], v[2]);
            Ok(NonlinearSde::new(
                "linear",
                move |_, y| a + b * y,
                move |_| s,
                |_, _| 1.0,
                (f64::NEG_INFINITY, f64::INFINITY),
                0.0,
            )?
            .autonomous()
            .with_dg_dy(|_, _| 0.0)
            .with_d2g_dy2(|_, _| 0.0)
            .with_dmu_dy(move |_, _| b))
        }
    }
}

/// Autonomous SDE from tabulated `mu(y)` and `g(y)` on common nodes,
/// interpolated by natural cubic splines, with constant `sigma`.
pub fn tabulated_sde(y: Vec<f64>, mu: Vec<f64>, g: Vec<f64>, sigma: f64) -> Result<NonlinearSde> {
    let mu_s = Arc::new(CubicSpline::new(y.clone(), mu)?);
    let g_s = Arc::new(CubicSpline::new(y, g)?);
    let (lo, hi) = g_s.domain();
    let anchor = 0.5 * (lo + hi);
    let (mu_val, mu_der) = (mu_s.clone(), mu_s);
    let (g_val, g_der, g_der2) = (g_s.clone(), g_s.clone(), g_s);
    Ok(NonlinearSde::new(
        "tabulated",
        move |_, v| mu_val.eval(v),
        move |_| sigma,
        move |_, v| g_val.eval(v),
        (lo, hi),
        anchor,
    )?
    .autonomous()
    .with_dg_dy(move |_, v| g_der.eval3(v).1)
    .with_d2g_dy2(move |_, v| g_der2.eval3(v).2)
    .with_dmu_dy(move |_, v| mu_der.eval3(v).1))
}
