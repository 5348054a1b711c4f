//! Linear Itô SDE models `dX = [a(t) + b(t) X] dt + sigma(t) dW`.
//!
//! A model is a set of coefficient evaluators over a labelled parameter
//! vector. Parameters are classified by where they enter the observation
//! law: the initial value and mean-only parameters affect only the mean,
//! shared parameters affect both mean and covariance, and the single
//! volatility parameter drives `sigma^2`.
//!
//! Builtins carry closed-form moments and analytic gradients. Any model can
//! be switched to the purely numeric path with [`Model::numeric`], which
//! recomputes everything by quadrature and finite differences.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Deref;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numdiff;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// The initial value `X0`.
    Initial,
    /// Enters only the drift intercept `a(t)`.
    MeanOnly,
    /// Enters the drift slope `b(t)` and therefore the covariance.
    Shared,
    /// The scalar parameter of `sigma^2(t)`.
    Volatility,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterPartition {
    names: Vec<String>,
    roles: Vec<Role>,
}

impl ParameterPartition {
    pub fn new<S: Into<String>>(entries: Vec<(S, Role)>) -> Result<Self> {
        let (names, roles): (Vec<String>, Vec<Role>) =
            entries.into_iter().map(|(n, r)| (n.into(), r)).unzip();
        let count = |role| roles.iter().filter(|&&r| r == role).count();
        if count(Role::Volatility) != 1 {
            return Err(Error::Partition(
                "exactly one volatility parameter is required".into(),
            ));
        }
        if count(Role::Initial) > 1 {
            return Err(Error::Partition(
                "at most one initial-value parameter".into(),
            ));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Partition(format!("duplicate label `{n}`")));
            }
        }
        Ok(Self { names, roles })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn roles(&self) -> &[Role] {
        &self.roles
    }

    pub fn role(&self, label: &str) -> Option<Role> {
        self.index_of(label).map(|i| self.roles[i])
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.names.iter().position(|n| n == label)
    }

    /// Total dimension `m`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn mean_only_count(&self) -> usize {
        self.roles.iter().filter(|&&r| r == Role::MeanOnly).count()
    }

    pub fn shared_count(&self) -> usize {
        self.roles.iter().filter(|&&r| r == Role::Shared).count()
    }

    pub fn has_initial(&self) -> bool {
        self.roles.contains(&Role::Initial)
    }

    pub fn initial_index(&self) -> Option<usize> {
        self.roles.iter().position(|&r| r == Role::Initial)
    }

    pub fn volatility_index(&self) -> usize {
        self.roles
            .iter()
            .position(|&r| r == Role::Volatility)
            .expect("partition invariant: one volatility parameter")
    }

    /// Labels of every parameter except the volatility one, in order.
    pub fn non_volatility_labels(&self) -> Vec<String> {
        self.names
            .iter()
            .zip(&self.roles)
            .filter(|(_, &r)| r != Role::Volatility)
            .map(|(n, _)| n.clone())
            .collect()
    }
}

/// Parameter values in partition order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(partition: &ParameterPartition, values: Vec<f64>) -> Result<Self> {
        if values.len() != partition.len() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, partition has {}",
                values.len(),
                partition.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::out_of_range(
                &partition.names()[i],
                "value must be finite",
            ));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Experimental domain `[lo, hi]` with `0 < lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Domain {
    lo: f64,
    hi: f64,
}

impl Domain {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Domain { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }
}

impl TryFrom<[f64; 2]> for Domain {
    type Error = Error;
    fn try_from(v: [f64; 2]) -> Result<Self> {
        Domain::new(v[0], v[1])
    }
}

impl From<Domain> for [f64; 2] {
    fn from(d: Domain) -> Self {
        [d.lo, d.hi]
    }
}

/// Partial derivatives of the coefficients with respect to every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientPartials {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma_sq: Vec<f64>,
}

/// Coefficients of a linear SDE. Evaluators are pure functions of `(t, theta)`.
///
/// The optional methods supply closed forms; returning `None` routes the
/// computation through quadrature or finite differences.
pub trait LinearSde: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn partition(&self) -> &ParameterPartition;

    fn a(&self, t: f64, theta: &[f64]) -> f64;
    fn b(&self, t: f64, theta: &[f64]) -> f64;
    fn sigma_sq(&self, t: f64, theta: &[f64]) -> f64;

    /// `X(0)`, read from `theta` when the initial value is a parameter.
    fn initial_value(&self, theta: &[f64]) -> f64;

    /// Open box `(lower, upper)` of admissible values per parameter.
    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.partition().len()]
    }

    /// An antiderivative `B(t)` of `b`.
    fn antiderivative(&self, _t: f64, _theta: &[f64]) -> Option<f64> {
        None
    }
    fn antiderivative_gradient(&self, _t: f64, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn mean(&self, _t: f64, _theta: &[f64]) -> Option<f64> {
        None
    }
    fn variance(&self, _t: f64, _theta: &[f64]) -> Option<f64> {
        None
    }
    fn mean_gradient(&self, _t: f64, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn variance_gradient(&self, _t: f64, _theta: &[f64]) -> Option<Vec<f64>> {
        None
    }
    fn partials(&self, _t: f64, _theta: &[f64]) -> Option<CoefficientPartials> {
        None
    }
}

/// Shared handle to a [`LinearSde`] plus its nominal parameter values.
#[derive(Debug, Clone)]
pub struct Model {
    sde: Arc<dyn LinearSde>,
    nominal: ParameterVector,
    analytic: bool,
}

impl Model {
    pub fn new(sde: Arc<dyn LinearSde>, nominal: Vec<f64>) -> Result<Self> {
        let nominal = ParameterVector::new(sde.partition(), nominal)?;
        let model = Self {
            sde,
            nominal,
            analytic: true,
        };
        model.check_bounds(&model.nominal)?;
        Ok(model)
    }

    /// Same model with every closed form disabled.
    pub fn numeric(&self) -> Self {
        Self {
            analytic: false,
            ..self.clone()
        }
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic
    }

    pub fn name(&self) -> &str {
        self.sde.name()
    }

    pub fn partition(&self) -> &ParameterPartition {
        self.sde.partition()
    }

    pub fn labels(&self) -> &[String] {
        self.sde.partition().names()
    }

    /// Parameter values supplied at construction.
    pub fn nominal(&self) -> &ParameterVector {
        &self.nominal
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.sde.bounds()
    }

    /// Builds a parameter vector, starting from the nominal values and
    /// overriding by label.
    pub fn parameters_with(&self, overrides: &BTreeMap<String, f64>) -> Result<ParameterVector> {
        let mut v = self.nominal.as_slice().to_vec();
        for (k, &val) in overrides {
            let i = self
                .partition()
                .index_of(k)
                .ok_or_else(|| Error::UnknownParameter(k.clone()))?;
            v[i] = val;
        }
        let p = ParameterVector::new(self.partition(), v)?;
        self.check_bounds(&p)?;
        Ok(p)
    }

    pub fn check_bounds(&self, theta: &[f64]) -> Result<()> {
        for ((name, &(lo, hi)), &v) in self.labels().iter().zip(&self.bounds()).zip(theta) {
            if !(v > lo && v < hi) {
                return Err(Error::out_of_range(
                    name,
                    format!("value {v} outside the open interval ({lo}, {hi})"),
                ));
            }
        }
        Ok(())
    }

    pub fn a(&self, t: f64, theta: &[f64]) -> f64 {
        self.sde.a(t, theta)
    }

    pub fn b(&self, t: f64, theta: &[f64]) -> f64 {
        self.sde.b(t, theta)
    }

    pub fn sigma_sq_unchecked(&self, t: f64, theta: &[f64]) -> f64 {
        self.sde.sigma_sq(t, theta)
    }

    /// `sigma^2(t)`, rejecting non-positive or non-finite values.
    pub fn sigma_sq(&self, t: f64, theta: &[f64]) -> Result<f64> {
        let s = self.sde.sigma_sq(t, theta);
        if !s.is_finite() {
            return Err(Error::NonFinite { what: "sigma^2", t });
        }
        if s <= 0.0 {
            return Err(Error::NonPositiveDiffusion { t, value: s });
        }
        Ok(s)
    }

    pub fn initial_value(&self, theta: &[f64]) -> f64 {
        self.sde.initial_value(theta)
    }

    pub(crate) fn closed_antiderivative(&self, t: f64, theta: &[f64]) -> Option<f64> {
        self.analytic
            .then(|| self.sde.antiderivative(t, theta))
            .flatten()
    }
    pub(crate) fn closed_antiderivative_gradient(&self, t: f64, theta: &[f64]) -> Option<Vec<f64>> {
        self.analytic
            .then(|| self.sde.antiderivative_gradient(t, theta))
            .flatten()
    }
    pub(crate) fn closed_mean(&self, t: f64, theta: &[f64]) -> Option<f64> {
        self.analytic.then(|| self.sde.mean(t, theta)).flatten()
    }
    pub(crate) fn closed_variance(&self, t: f64, theta: &[f64]) -> Option<f64> {
        self.analytic.then(|| self.sde.variance(t, theta)).flatten()
    }
    pub(crate) fn closed_mean_gradient(&self, t: f64, theta: &[f64]) -> Option<Vec<f64>> {
        self.analytic
            .then(|| self.sde.mean_gradient(t, theta))
            .flatten()
    }
    pub(crate) fn closed_variance_gradient(&self, t: f64, theta: &[f64]) -> Option<Vec<f64>> {
        self.analytic
            .then(|| self.sde.variance_gradient(t, theta))
            .flatten()
    }
}

/// Gradients of `a`, `b` and `sigma^2` at `(t, theta)`: analytic when the
/// model provides them, central differences otherwise.
pub fn coefficient_partials(model: &Model, t: f64, theta: &[f64]) -> Result<CoefficientPartials> {
    if !t.is_finite() {
        return Err(Error::NonFinite { what: "time", t });
    }
    let p = match model
        .analytic
        .then(|| model.sde.partials(t, theta))
        .flatten()
    {
        Some(p) => p,
        None => CoefficientPartials {
            a: numdiff::gradient(theta, |th| Ok(model.a(t, th)))?,
            b: numdiff::gradient(theta, |th| Ok(model.b(t, th)))?,
            sigma_sq: numdiff::gradient(theta, |th| Ok(model.sigma_sq_unchecked(t, th)))?,
        },
    };
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    if !(finite(&p.a) && finite(&p.b) && finite(&p.sigma_sq)) {
        return Err(Error::NonFinite {
            what: "coefficient partials",
            t,
        });
    }
    Ok(p)
}

// ---------------------------------------------------------------------------
// Builtin models
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    /// Log-transformed stochastic Gompertz growth.
    GompertzLog,
    /// `dX = theta2 (theta1 - X) dt + theta3 dW`.
    MeanReversionOu,
    /// `dX = theta1 dt + theta3 dW`.
    BrownianDrift,
    /// `dX = theta2/2 (X0 - X) dt + exp(-theta3 t / 2) dW`, with only `X0` unknown.
    X0Counterexample,
}

impl BuiltinModel {
    pub const ALL: [BuiltinModel; 4] = [
        BuiltinModel::GompertzLog,
        BuiltinModel::MeanReversionOu,
        BuiltinModel::BrownianDrift,
        BuiltinModel::X0Counterexample,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BuiltinModel::GompertzLog => "gompertz_log",
            BuiltinModel::MeanReversionOu => "mean_reversion_ou",
            BuiltinModel::BrownianDrift => "brownian_drift",
            BuiltinModel::X0Counterexample => "x0_counterexample",
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BuiltinModel::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownModel(s.to_string()))
    }
}

/// Options that are not parameter values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    /// Treat `X0` as an unknown parameter labelled `X0`.
    pub estimate_x0: bool,
}

fn canonical_label(label: &str) -> &str {
    match label {
        "ρ" => "rho",
        "δ" => "delta",
        "γ" => "gamma",
        "θ1" => "theta1",
        "θ2" => "theta2",
        "θ3" => "theta3",
        other => other,
    }
}

struct ParamReader<'a> {
    params: BTreeMap<&'a str, f64>,
    used: Vec<&'static str>,
}

impl<'a> ParamReader<'a> {
    fn new(params: &'a BTreeMap<String, f64>) -> Self {
        Self {
            params: params
                .iter()
                .map(|(k, &v)| (canonical_label(k), v))
                .collect(),
            used: Vec::new(),
        }
    }

    fn get(&mut self, label: &'static str) -> Result<f64> {
        self.used.push(label);
        let v = *self
            .params
            .get(label)
            .ok_or_else(|| Error::MissingParameter(label.to_string()))?;
        if !v.is_finite() {
            return Err(Error::out_of_range(label, "must be finite"));
        }
        Ok(v)
    }

    fn get_or(&mut self, label: &'static str, default: f64) -> Result<f64> {
        if self.params.contains_key(label) {
            self.get(label)
        } else {
            self.used.push(label);
            Ok(default)
        }
    }

    fn positive(&mut self, label: &'static str) -> Result<f64> {
        let v = self.get(label)?;
        if v <= 0.0 {
            return Err(Error::out_of_range(
                label,
                format!("{label} must be positive"),
            ));
        }
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        for k in self.params.keys() {
            if !self.used.contains(k) {
                return Err(Error::UnknownParameter(k.to_string()));
            }
        }
        Ok(())
    }
}

/// Constructs a builtin model from labelled values. Greek labels are
/// accepted as aliases (`ρ` for `rho` and so on).
pub fn make_builtin_model(name: BuiltinModel, params: &BTreeMap<String, f64>) -> Result<Model> {
    make_builtin_model_with(name, params, ModelOptions::default())
}

pub fn make_builtin_model_with(
    name: BuiltinModel,
    params: &BTreeMap<String, f64>,
    options: ModelOptions,
) -> Result<Model> {
    let mut r = ParamReader::new(params);
    let model = match name {
        BuiltinModel::GompertzLog => {
            let rho = r.get("rho")?;
            let delta = r.positive("delta")?;
            let gamma = r.positive("gamma")?;
            let y0 = r.positive("Y0")?;
            let sde = GompertzLog::new(options.estimate_x0, y0.ln());
            let mut nominal = Vec::new();
            if options.estimate_x0 {
                nominal.push(y0.ln());
            }
            nominal.extend([rho, delta, gamma]);
            Model::new(Arc::new(sde), nominal)?
        }
        BuiltinModel::MeanReversionOu => {
            let t1 = r.get("theta1")?;
            let t2 = r.positive("theta2")?;
            let t3 = r.positive("theta3")?;
            let x0 = r.get_or("X0", 0.0)?;
            let sde = MeanReversionOu::new(options.estimate_x0, x0);
            let mut nominal = Vec::new();
            if options.estimate_x0 {
                nominal.push(x0);
            }
            nominal.extend([t1, t2, t3]);
            Model::new(Arc::new(sde), nominal)?
        }
        BuiltinModel::BrownianDrift => {
            let t1 = r.get("theta1")?;
            let t3 = r.positive("theta3")?;
            let x0 = r.get_or("X0", 0.0)?;
            let sde = BrownianDrift::new(options.estimate_x0, x0);
            let mut nominal = Vec::new();
            if options.estimate_x0 {
                nominal.push(x0);
            }
            nominal.extend([t1, t3]);
            Model::new(Arc::new(sde), nominal)?
        }
        BuiltinModel::X0Counterexample => {
            let t2 = r.positive("theta2")?;
            let t3 = r.positive("theta3")?;
            let x0 = r.get_or("X0", 0.0)?;
            Model::new(Arc::new(X0Counterexample::new()), vec![x0, t2, t3])?
        }
    };
    r.finish()?;
    Ok(model)
}

fn partition_with_x0(estimate_x0: bool, rest: &[(&str, Role)]) -> ParameterPartition {
    let mut entries: Vec<(String, Role)> = Vec::new();
    if estimate_x0 {
        entries.push(("X0".into(), Role::Initial));
    }
    entries.extend(rest.iter().map(|&(n, r)| (n.to_string(), r)));
    ParameterPartition::new(entries).expect("builtin partitions are valid")
}

/// `1 - exp(-x)` without cancellation.
fn one_minus_exp_neg(x: f64) -> f64 {
    -(-x).exp_m1()
}

/// `X = ln Y` for `dY = (rho Y - delta Y ln Y) dt + gamma Y dW`.
#[derive(Debug, Clone)]
pub struct GompertzLog {
    partition: ParameterPartition,
    off: usize,
    x0: f64,
}

impl GompertzLog {
    pub fn new(estimate_x0: bool, x0: f64) -> Self {
        Self {
            partition: partition_with_x0(
                estimate_x0,
                &[
                    ("rho", Role::MeanOnly),
                    ("delta", Role::Shared),
                    ("gamma", Role::Volatility),
                ],
            ),
            off: usize::from(estimate_x0),
            x0,
        }
    }

    fn unpack(&self, th: &[f64]) -> (f64, f64, f64, f64) {
        let o = self.off;
        let x0 = if o == 1 { th[0] } else { self.x0 };
        (x0, th[o], th[o + 1], th[o + 2])
    }
}

impl LinearSde for GompertzLog {
    fn name(&self) -> &str {
        "gompertz_log"
    }
    fn partition(&self) -> &ParameterPartition {
        &self.partition
    }
    fn a(&self, _t: f64, th: &[f64]) -> f64 {
        let (_, rho, _, gamma) = self.unpack(th);
        rho - 0.5 * gamma * gamma
    }
    fn b(&self, _t: f64, th: &[f64]) -> f64 {
        -self.unpack(th).2
    }
    fn sigma_sq(&self, _t: f64, th: &[f64]) -> f64 {
        let g = self.unpack(th).3;
        g * g
    }
    fn initial_value(&self, th: &[f64]) -> f64 {
        self.unpack(th).0
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); self.partition.len()];
        b[self.off + 1] = (0.0, f64::INFINITY);
        b[self.off + 2] = (0.0, f64::INFINITY);
        b
    }
    fn antiderivative(&self, t: f64, th: &[f64]) -> Option<f64> {
        Some(-self.unpack(th).2 * t)
    }
    fn antiderivative_gradient(&self, t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.partition.len()];
        g[self.off + 1] = -t;
        Some(g)
    }
    fn mean(&self, t: f64, th: &[f64]) -> Option<f64> {
        let (x0, rho, delta, gamma) = self.unpack(th);
        let a = rho - 0.5 * gamma * gamma;
        Some((-delta * t).exp() * x0 + a * one_minus_exp_neg(delta * t) / delta)
    }
    fn variance(&self, t: f64, th: &[f64]) -> Option<f64> {
        let (_, _, delta, gamma) = self.unpack(th);
        Some(gamma * gamma * one_minus_exp_neg(2.0 * delta * t) / (2.0 * delta))
    }
    fn mean_gradient(&self, t: f64, th: &[f64]) -> Option<Vec<f64>> {
        let (x0, rho, delta, gamma) = self.unpack(th);
        let a = rho - 0.5 * gamma * gamma;
        let e = (-delta * t).exp();
        let k = one_minus_exp_neg(delta * t) / delta;
        let mut g = vec![0.0; self.partition.len()];
        let o = self.off;
        if o == 1 {
            g[0] = e;
        }
        g[o] = k;
        g[o + 1] = -t * e * x0 + a * (t * e / delta - k / delta);
        g[o + 2] = -gamma * k;
        Some(g)
    }
    fn variance_gradient(&self, t: f64, th: &[f64]) -> Option<Vec<f64>> {
        let (_, _, delta, gamma) = self.unpack(th);
        let e2 = (-2.0 * delta * t).exp();
        let q = one_minus_exp_neg(2.0 * delta * t);
        let mut g = vec![0.0; self.partition.len()];
        let o = self.off;
        g[o + 1] = gamma * gamma * (t * e2 / delta - q / (2.0 * delta * delta));
        g[o + 2] = gamma * q / delta;
        Some(g)
    }
    fn partials(&self, _t: f64, th: &[f64]) -> Option<CoefficientPartials> {
        let gamma = self.unpack(th).3;
        let m = self.partition.len();
        let o = self.off;
        let mut a = vec![0.0; m];
        a[o] = 1.0;
        a[o + 2] = -gamma;
        let mut b = vec![0.0; m];
        b[o + 1] = -1.0;
        let mut s = vec![0.0; m];
        s[o + 2] = 2.0 * gamma;
        Some(CoefficientPartials { a, b, sigma_sq: s })
    }
}

/// `dX = theta2 (theta1 - X) dt + theta3 dW`.
#[derive(Debug, Clone)]
pub struct MeanReversionOu {
    partition: ParameterPartition,
    off: usize,
    x0: f64,
}

impl MeanReversionOu {
    pub fn new(estimate_x0: bool, x0: f64) -> Self {
        Self {
            partition: partition_with_x0(
                estimate_x0,
                &[
                    ("theta1", Role::MeanOnly),
                    ("theta2", Role::Shared),
                    ("theta3", Role::Volatility),
                ],
            ),
            off: usize::from(estimate_x0),
            x0,
        }
    }

    fn unpack(&self, th: &[f64]) -> (f64, f64, f64, f64) {
        let o = self.off;
        let x0 = if o == 1 { th[0] } else { self.x0 };
        (x0, th[o], th[o + 1], th[o + 2])
    }
}

impl LinearSde for MeanReversionOu {
    fn name(&self) -> &str {
        "mean_reversion_ou"
    }
    fn partition(&self) -> &ParameterPartition {
        &self.partition
    }
    fn a(&self, _t: f64, th: &[f64]) -> f64 {
        let (_, t1, t2, _) = self.unpack(th);
        t2 * t1
    }
    fn b(&self, _t: f64, th: &[f64]) -> f64 {
        -self.unpack(th).2
    }
    fn sigma_sq(&self, _t: f64, th: &[f64]) -> f64 {
        let s = self.unpack(th).3;
        s * s
    }
    fn initial_value(&self, th: &[f64]) -> f64 {
        self.unpack(th).0
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); self.partition.len()];
        b[self.off + 1] = (0.0, f64::INFINITY);
        b[self.off + 2] = (0.0, f64::INFINITY);
        b
    }
    fn antiderivative(&self, t: f64, th: &[f64]) -> Option<f64> {
        Some(-self.unpack(th).2 * t)
    }
    fn antiderivative_gradient(&self, t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        let mut g = vec![0.0; self.partition.len()];
        g[self.off + 1] = -t;
        Some(g)
    }
    fn mean(&self, t: f64, th: &[f64]) -> Option<f64> {
        let (x0, t1, t2, _) = self.unpack(th);
        Some((-t2 * t).exp() * x0 + t1 * one_minus_exp_neg(t2 * t))
    }
    fn variance(&self, t: f64, th: &[f64]) -> Option<f64> {
        let (_, _, t2, t3) = self.unpack(th);
        Some(t3 * t3 * one_minus_exp_neg(2.0 * t2 * t) / (2.0 * t2))
    }
    fn mean_gradient(&self, t: f64, th: &[f64]) -> Option<Vec<f64>> {
        let (x0, t1, t2, _) = self.unpack(th);
        let e = (-t2 * t).exp();
        let o = self.off;
        let mut g = vec![0.0; self.partition.len()];
        if o == 1 {
            g[0] = e;
        }
        g[o] = one_minus_exp_neg(t2 * t);
        g[o + 1] = t * e * (t1 - x0);
        Some(g)
    }
    fn variance_gradient(&self, t: f64, th: &[f64]) -> Option<Vec<f64>> {
        let (_, _, t2, t3) = self.unpack(th);
        let e2 = (-2.0 * t2 * t).exp();
        let q = one_minus_exp_neg(2.0 * t2 * t);
        let o = self.off;
        let mut g = vec![0.0; self.partition.len()];
        g[o + 1] = t3 * t3 * (t * e2 / t2 - q / (2.0 * t2 * t2));
        g[o + 2] = t3 * q / t2;
        Some(g)
    }
    fn partials(&self, _t: f64, th: &[f64]) -> Option<CoefficientPartials> {
        let (_, t1, t2, t3) = self.unpack(th);
        let m = self.partition.len();
        let o = self.off;
        let mut a = vec![0.0; m];
        a[o] = t2;
        a[o + 1] = t1;
        let mut b = vec![0.0; m];
        b[o + 1] = -1.0;
        let mut s = vec![0.0; m];
        s[o + 2] = 2.0 * t3;
        Some(CoefficientPartials { a, b, sigma_sq: s })
    }
}

/// `dX = theta1 dt + theta3 dW`.
#[derive(Debug, Clone)]
pub struct BrownianDrift {
    partition: ParameterPartition,
    off: usize,
    x0: f64,
}

impl BrownianDrift {
    pub fn new(estimate_x0: bool, x0: f64) -> Self {
        Self {
            partition: partition_with_x0(
                estimate_x0,
                &[("theta1", Role::MeanOnly), ("theta3", Role::Volatility)],
            ),
            off: usize::from(estimate_x0),
            x0,
        }
    }

    fn unpack(&self, th: &[f64]) -> (f64, f64, f64) {
        let o = self.off;
        let x0 = if o == 1 { th[0] } else { self.x0 };
        (x0, th[o], th[o + 1])
    }
}

impl LinearSde for BrownianDrift {
    fn name(&self) -> &str {
        "brownian_drift"
    }
    fn partition(&self) -> &ParameterPartition {
        &self.partition
    }
    fn a(&self, _t: f64, th: &[f64]) -> f64 {
        self.unpack(th).1
    }
    fn b(&self, _t: f64, _th: &[f64]) -> f64 {
        0.0
    }
    fn sigma_sq(&self, _t: f64, th: &[f64]) -> f64 {
        let s = self.unpack(th).2;
        s * s
    }
    fn initial_value(&self, th: &[f64]) -> f64 {
        self.unpack(th).0
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); self.partition.len()];
        b[self.off + 1] = (0.0, f64::INFINITY);
        b
    }
    fn antiderivative(&self, _t: f64, _th: &[f64]) -> Option<f64> {
        Some(0.0)
    }
    fn antiderivative_gradient(&self, _t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0; self.partition.len()])
    }
    fn mean(&self, t: f64, th: &[f64]) -> Option<f64> {
        let (x0, t1, _) = self.unpack(th);
        Some(x0 + t1 * t)
    }
    fn variance(&self, t: f64, th: &[f64]) -> Option<f64> {
        let s = self.unpack(th).2;
        Some(s * s * t)
    }
    fn mean_gradient(&self, t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        let o = self.off;
        let mut g = vec![0.0; self.partition.len()];
        if o == 1 {
            g[0] = 1.0;
        }
        g[o] = t;
        Some(g)
    }
    fn variance_gradient(&self, t: f64, th: &[f64]) -> Option<Vec<f64>> {
        let s = self.unpack(th).2;
        let mut g = vec![0.0; self.partition.len()];
        g[self.off + 1] = 2.0 * s * t;
        Some(g)
    }
    fn partials(&self, _t: f64, th: &[f64]) -> Option<CoefficientPartials> {
        let s = self.unpack(th).2;
        let m = self.partition.len();
        let mut a = vec![0.0; m];
        a[self.off] = 1.0;
        let mut sig = vec![0.0; m];
        sig[self.off + 1] = 2.0 * s;
        Some(CoefficientPartials {
            a,
            b: vec![0.0; m],
            sigma_sq: sig,
        })
    }
}

/// A model whose drift contains the initial value, so the first-point
/// optimality of the initial-value design no longer holds. Parameters are
/// `(X0, theta2, theta3)`; only `X0` is meant to be estimated.
#[derive(Debug, Clone)]
pub struct X0Counterexample {
    partition: ParameterPartition,
}

impl X0Counterexample {
    pub fn new() -> Self {
        Self {
            partition: ParameterPartition::new(vec![
                ("X0", Role::Initial),
                ("theta2", Role::Shared),
                ("theta3", Role::Volatility),
            ])
            .expect("valid partition"),
        }
    }
}

impl Default for X0Counterexample {
    fn default() -> Self {
        Self::new()
    }
}

impl LinearSde for X0Counterexample {
    fn name(&self) -> &str {
        "x0_counterexample"
    }
    fn partition(&self) -> &ParameterPartition {
        &self.partition
    }
    fn a(&self, _t: f64, th: &[f64]) -> f64 {
        0.5 * th[1] * th[0]
    }
    fn b(&self, _t: f64, th: &[f64]) -> f64 {
        -0.5 * th[1]
    }
    fn sigma_sq(&self, t: f64, th: &[f64]) -> f64 {
        (-th[2] * t).exp()
    }
    fn initial_value(&self, th: &[f64]) -> f64 {
        th[0]
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![
            (f64::NEG_INFINITY, f64::INFINITY),
            (0.0, f64::INFINITY),
            (0.0, f64::INFINITY),
        ]
    }
    fn antiderivative(&self, t: f64, th: &[f64]) -> Option<f64> {
        Some(-0.5 * th[1] * t)
    }
    fn antiderivative_gradient(&self, t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0, -0.5 * t, 0.0])
    }
    fn mean(&self, _t: f64, th: &[f64]) -> Option<f64> {
        Some(th[0])
    }
    fn variance(&self, t: f64, th: &[f64]) -> Option<f64> {
        let d = th[1] - th[2];
        let ratio = if d == 0.0 { t } else { (d * t).exp_m1() / d };
        Some((-th[1] * t).exp() * ratio)
    }
    fn mean_gradient(&self, _t: f64, _th: &[f64]) -> Option<Vec<f64>> {
        Some(vec![1.0, 0.0, 0.0])
    }
    fn partials(&self, t: f64, th: &[f64]) -> Option<CoefficientPartials> {
        Some(CoefficientPartials {
            a: vec![0.5 * th[1], 0.5 * th[0], 0.0],
            b: vec![0.0, -0.5, 0.0],
            sigma_sq: vec![0.0, 0.0, -t * (-th[2] * t).exp()],
        })
    }
}

type CoefFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// A user-defined model with no closed forms; every moment is computed by
/// quadrature and every gradient by finite differences.
#[derive(Clone)]
pub struct CustomSde {
    name: String,
    partition: ParameterPartition,
    a: CoefFn,
    b: CoefFn,
    sigma_sq: CoefFn,
    x0: f64,
    bounds: Vec<(f64, f64)>,
}

impl fmt::Debug for CustomSde {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomSde")
            .field("name", &self.name)
            .field("partition", &self.partition)
            .field("x0", &self.x0)
            .finish_non_exhaustive()
    }
}

impl CustomSde {
    /// `x0` is used only when the partition has no initial-value parameter.
    pub fn new(
        name: impl Into<String>,
        partition: ParameterPartition,
        a: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        sigma_sq: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
        x0: f64,
    ) -> Self {
        let m = partition.len();
        Self {
            name: name.into(),
            partition,
            a: Arc::new(a),
            b: Arc::new(b),
            sigma_sq: Arc::new(sigma_sq),
            x0,
            bounds: vec![(f64::NEG_INFINITY, f64::INFINITY); m],
        }
    }

    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        assert_eq!(bounds.len(), self.partition.len());
        self.bounds = bounds;
        self
    }
}

impl LinearSde for CustomSde {
    fn name(&self) -> &str {
        &self.name
    }
    fn partition(&self) -> &ParameterPartition {
        &self.partition
    }
    fn a(&self, t: f64, th: &[f64]) -> f64 {
        (self.a)(t, th)
    }
    fn b(&self, t: f64, th: &[f64]) -> f64 {
        (self.b)(t, th)
    }
    fn sigma_sq(&self, t: f64, th: &[f64]) -> f64 {
        (self.sigma_sq)(t, th)
    }
    fn initial_value(&self, th: &[f64]) -> f64 {
        match self.partition.initial_index() {
            Some(i) => th[i],
            None => self.x0,
        }
    }
    fn bounds(&self) -> Vec<(f64, f64)> {
        self.bounds.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
        kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn gompertz_coefficients() {
        let m = make_builtin_model(
            BuiltinModel::GompertzLog,
            &params(&[("rho", 1.0), ("delta", 1.0), ("gamma", 1.0), ("Y0", 1.0)]),
        )
        .unwrap();
        let th = m.nominal().clone();
        assert_eq!(m.a(0.3, &th), 0.5);
        assert_eq!(m.b(0.3, &th), -1.0);
        assert_eq!(m.sigma_sq(0.3, &th).unwrap(), 1.0);
        assert_eq!(m.initial_value(&th), 0.0);
        let part = m.partition();
        assert_eq!(part.role("rho"), Some(Role::MeanOnly));
        assert_eq!(part.role("delta"), Some(Role::Shared));
        assert_eq!(part.role("gamma"), Some(Role::Volatility));
        assert!(!part.has_initial());
        assert_eq!(
            (part.mean_only_count(), part.shared_count(), part.len()),
            (1, 1, 3)
        );
    }

    #[test]
    fn greek_aliases() {
        let m = make_builtin_model(
            BuiltinModel::GompertzLog,
            &params(&[("ρ", 2.0), ("δ", 1.0), ("γ", 1.0), ("Y0", 1.0)]),
        )
        .unwrap();
        assert_eq!(m.nominal().as_slice(), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn mean_reversion_coefficients() {
        let m = make_builtin_model(
            BuiltinModel::MeanReversionOu,
            &params(&[
                ("theta1", 0.0),
                ("theta2", 1.0),
                ("theta3", 1.0),
                ("X0", 0.0),
            ]),
        )
        .unwrap();
        let th = m.nominal().clone();
        assert_eq!(m.a(1.0, &th), 0.0);
        assert_eq!(m.b(1.0, &th), -1.0);
        assert_eq!(m.sigma_sq(1.0, &th).unwrap(), 1.0);
    }

    #[test]
    fn rejects_nonpositive_delta() {
        let err = make_builtin_model(
            BuiltinModel::GompertzLog,
            &params(&[("rho", 1.0), ("delta", 0.0), ("gamma", 1.0), ("Y0", 1.0)]),
        )
        .unwrap_err();
        assert_eq!(
            err.to_string(),
            "parameter `delta` out of range: delta must be positive"
        );
    }

    #[test]
    fn rejects_missing_and_unknown_labels() {
        let err = make_builtin_model(
            BuiltinModel::GompertzLog,
            &params(&[("rho", 1.0), ("delta", 1.0), ("Y0", 1.0)]),
        )
        .unwrap_err();
        assert_eq!(err, Error::MissingParameter("gamma".into()));
        let err = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &params(&[("theta1", 1.0), ("theta3", 1.0), ("kappa", 1.0)]),
        )
        .unwrap_err();
        assert_eq!(err, Error::UnknownParameter("kappa".into()));
        assert!(matches!(
            "nope".parse::<BuiltinModel>(),
            Err(Error::UnknownModel(_))
        ));
    }

    #[test]
    fn partition_invariants() {
        assert!(ParameterPartition::new(vec![("a", Role::MeanOnly)]).is_err());
        assert!(ParameterPartition::new(vec![
            ("x", Role::Initial),
            ("y", Role::Initial),
            ("s", Role::Volatility)
        ])
        .is_err());
        assert!(
            ParameterPartition::new(vec![("s", Role::Volatility), ("s", Role::MeanOnly)]).is_err()
        );
    }

    #[test]
    fn gompertz_partials_by_hand() {
        let m = make_builtin_model(
            BuiltinModel::GompertzLog,
            &params(&[("rho", 1.0), ("delta", 1.0), ("gamma", 1.0), ("Y0", 1.0)]),
        )
        .unwrap();
        let p = coefficient_partials(&m, 0.7, m.nominal()).unwrap();
        assert_eq!(p.a, vec![1.0, 0.0, -1.0]);
        assert_eq!(p.b, vec![0.0, -1.0, 0.0]);
        let bm = make_builtin_model(
            BuiltinModel::BrownianDrift,
            &params(&[("theta1", 1.0), ("theta3", 2.0)]),
        )
        .unwrap();
        let p = coefficient_partials(&bm, 1.0, bm.nominal()).unwrap();
        assert_eq!(p.b, vec![0.0, 0.0]);
    }

    #[test]
    fn sigma_check_rejects_nonpositive() {
        let part = ParameterPartition::new(vec![("s", Role::Volatility)]).unwrap();
        let sde = CustomSde::new("bad", part, |_, _| 0.0, |_, _| 0.0, |t, _| 1.0 - t, 0.0);
        let m = Model::new(Arc::new(sde), vec![1.0]).unwrap();
        assert!(m.sigma_sq(0.5, &[1.0]).is_ok());
        assert!(matches!(
            m.sigma_sq(2.0, &[1.0]),
            Err(Error::NonPositiveDiffusion { .. })
        ));
    }

    #[test]
    fn domain_validation() {
        assert!(Domain::new(1.0, 2.0).is_ok());
        assert!(Domain::new(0.0, 2.0).is_err());
        assert!(Domain::new(2.0, 2.0).is_err());
    }
}
