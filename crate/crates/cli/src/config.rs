//! Run configuration: a JSON document parsed with unknown keys rejected,
//! then validated against the model it names.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use ou_design::{
    make_builtin_model_with, make_nonlinear_builtin, tabulated_sde, BuiltinModel, Criterion,
    Domain, Model, ModelOptions, NonlinearBuiltin, NonlinearSde, OptimizerSettings, SamplingDesign,
    SubvectorSelection,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("`{field}`: {message}")]
    Field { field: String, message: String },

    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    fn field(field: impl Into<String>, message: impl fmt::Display) -> Self {
        ConfigError::Field {
            field: field.into(),
            message: message.to_string(),
        }
    }

    /// Dotted path of the offending field, when there is one.
    pub fn field_name(&self) -> Option<&str> {
        match self {
            ConfigError::Field { field, .. } => Some(field),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Moments,
    Fim,
    Asymptotic,
    Ueff,
    Optimize,
    CheckOutype,
    McValidate,
    Figure1,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Moments => "moments",
            Command::Fim => "fim",
            Command::Asymptotic => "asymptotic",
            Command::Ueff => "ueff",
            Command::Optimize => "optimize",
            Command::CheckOutype => "check-outype",
            Command::McValidate => "mc-validate",
            Command::Figure1 => "figure1",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `{"model": name, "params": {label: value}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default)]
    pub estimate_x0: bool,
}

impl ModelConfig {
    pub fn build(&self) -> Result<Model, ConfigError> {
        let kind: BuiltinModel = self
            .model
            .parse()
            .map_err(|e| ConfigError::field("model.model", e))?;
        let options = ModelOptions {
            estimate_x0: self.estimate_x0,
        };
        make_builtin_model_with(kind, &self.params, options).map_err(|e| {
            use ou_design::Error as E;
            let field = match &e {
                E::OutOfRange { label, .. } => format!("model.params.{label}"),
                E::MissingParameter(label) | E::UnknownParameter(label) => {
                    format!("model.params.{label}")
                }
                _ => "model".to_string(),
            };
            ConfigError::field(field, e)
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionConfig {
    pub kept: Vec<String>,
    #[serde(default)]
    pub nuisance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SdeConfig {
    Builtin {
        name: String,
        #[serde(default)]
        params: BTreeMap<String, f64>,
    },
    Tabulated {
        y: Vec<f64>,
        mu: Vec<f64>,
        g: Vec<f64>,
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutypeConfig {
    pub sde: SdeConfig,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    pub y_grid: Vec<f64>,
}

fn default_t_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

impl OutypeConfig {
    pub fn build(&self) -> Result<NonlinearSde, ConfigError> {
        match &self.sde {
            SdeConfig::Builtin { name, params } => {
                let kind: NonlinearBuiltin = name
                    .parse()
                    .map_err(|e| ConfigError::field("outype.sde.builtin.name", e))?;
                make_nonlinear_builtin(kind, params)
                    .map_err(|e| ConfigError::field("outype.sde.builtin.params", e))
            }
            SdeConfig::Tabulated { y, mu, g, sigma } => {
                tabulated_sde(y.clone(), mu.clone(), g.clone(), *sigma)
                    .map_err(|e| ConfigError::field("outype.sde.tabulated", e))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub subcommand: Option<Command>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    /// `[lo, hi]`.
    #[serde(default)]
    pub domain: Option<[f64; 2]>,
    #[serde(default)]
    pub design: Option<Vec<f64>>,
    #[serde(default)]
    pub n: Option<Vec<usize>>,
    #[serde(default = "default_criteria")]
    pub criteria: Vec<Criterion>,
    #[serde(default)]
    pub selection: Option<SelectionConfig>,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    /// Overrides `optimizer.seed` when present; also seeds Monte-Carlo runs.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub outype: Option<OutypeConfig>,
}

fn default_criteria() -> Vec<Criterion> {
    Criterion::ALL.to_vec()
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            subcommand: None,
            model: None,
            domain: None,
            design: None,
            n: None,
            criteria: default_criteria(),
            selection: None,
            optimizer: OptimizerSettings::default(),
            seed: None,
            replications: None,
            output: None,
            outype: None,
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = serde_json::from_str(text).map_err(|e| {
        let suffix = format!(" at line {} column {}", e.line(), e.column());
        let full = e.to_string();
        ConfigError::Syntax {
            line: e.line(),
            column: e.column(),
            message: full.strip_suffix(&suffix).unwrap_or(&full).to_string(),
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &std::path::Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

impl RunConfig {
    /// Checks every field that is present. Missing fields are only an
    /// error once a subcommand needs them (see [`RunConfig::require`]).
    pub fn validate(&self) -> Result<(), ConfigError> {
        let model = self.model.as_ref().map(ModelConfig::build).transpose()?;
        let domain = self.domain_opt()?;
        if let (Some(times), Some(domain)) = (&self.design, domain) {
            SamplingDesign::new(times.clone(), domain)
                .map_err(|e| ConfigError::field("design", e))?;
        }
        if let Some(ns) = &self.n {
            if ns.is_empty() {
                return Err(ConfigError::field("n", "list must not be empty"));
            }
            if ns.contains(&0) {
                return Err(ConfigError::field("n", "sizes must be at least 1"));
            }
        }
        if self.criteria.is_empty() {
            return Err(ConfigError::field("criteria", "list must not be empty"));
        }
        if let Some(sel) = &self.selection {
            let s = SubvectorSelection::new(sel.kept.clone(), sel.nuisance.clone())
                .map_err(|e| ConfigError::field("selection", e))?;
            if let Some(m) = &model {
                s.validate_for(m)
                    .map_err(|e| ConfigError::field("selection", e))?;
            }
        }
        let opt = &self.optimizer;
        if opt.restarts == 0 {
            return Err(ConfigError::field(
                "optimizer.restarts",
                "must be at least 1",
            ));
        }
        if opt.grid_size < 2 {
            return Err(ConfigError::field(
                "optimizer.grid_size",
                "must be at least 2",
            ));
        }
        if let Some(g) = opt.min_gap {
            if !(g > 0.0 && g.is_finite()) {
                return Err(ConfigError::field("optimizer.min_gap", "must be positive"));
            }
        }
        if let Some(r) = self.replications {
            if r < 100 {
                return Err(ConfigError::field("replications", "must be at least 100"));
            }
        }
        if let Some(o) = &self.outype {
            o.build()?;
            if o.t_grid.is_empty() {
                return Err(ConfigError::field("outype.t_grid", "must not be empty"));
            }
            if o.y_grid.len() < 3 {
                return Err(ConfigError::field(
                    "outype.y_grid",
                    "needs at least 3 points",
                ));
            }
        }
        Ok(())
    }

    /// Fails unless every field `cmd` depends on is present.
    pub fn require(&self, cmd: Command) -> Result<(), ConfigError> {
        let need = |present: bool, field: &str| {
            if present {
                Ok(())
            } else {
                Err(ConfigError::field(field, format!("required by `{cmd}`")))
            }
        };
        if let Some(declared) = self.subcommand {
            if declared != cmd {
                return Err(ConfigError::field(
                    "subcommand",
                    format!("config is for `{declared}`, invoked as `{cmd}`"),
                ));
            }
        }
        let has_points = self.design.is_some() || self.n.is_some();
        match cmd {
            Command::Figure1 => Ok(()),
            Command::CheckOutype => need(self.outype.is_some(), "outype"),
            Command::Asymptotic => {
                need(self.model.is_some(), "model")?;
                need(self.domain.is_some(), "domain")
            }
            Command::Moments | Command::Fim | Command::Ueff | Command::McValidate => {
                need(self.model.is_some(), "model")?;
                need(self.domain.is_some(), "domain")?;
                need(has_points, "design")
            }
            Command::Optimize => {
                need(self.model.is_some(), "model")?;
                need(self.domain.is_some(), "domain")?;
                need(self.n.is_some(), "n")
            }
        }
    }

    fn domain_opt(&self) -> Result<Option<Domain>, ConfigError> {
        self.domain
            .map(|[lo, hi]| Domain::new(lo, hi).map_err(|e| ConfigError::field("domain", e)))
            .transpose()
    }

    pub fn build_model(&self) -> Result<Model, ConfigError> {
        self.model
            .as_ref()
            .ok_or_else(|| ConfigError::field("model", "missing"))?
            .build()
    }

    pub fn build_domain(&self) -> Result<Domain, ConfigError> {
        self.domain_opt()?
            .ok_or_else(|| ConfigError::field("domain", "missing"))
    }

    /// The explicit selection, or every label except the volatility one
    /// with volatility as the nuisance.
    pub fn build_selection(&self, model: &Model) -> Result<SubvectorSelection, ConfigError> {
        match &self.selection {
            Some(s) => {
                let sel = SubvectorSelection::new(s.kept.clone(), s.nuisance.clone())
                    .map_err(|e| ConfigError::field("selection", e))?;
                sel.validate_for(model)
                    .map_err(|e| ConfigError::field("selection", e))?;
                Ok(sel)
            }
            None => Ok(SubvectorSelection::excluding_volatility(model)),
        }
    }

    pub fn optimizer_settings(&self) -> OptimizerSettings {
        let mut s = self.optimizer.clone();
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s
    }
}
