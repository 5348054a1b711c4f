//! One function per subcommand, each turning a validated configuration
//! into a CSV table.

use ou_design::moments;
use ou_design::{
    affinity_check, equidistant_design, fim_asymptotic, fim_exact, mc_crlb_study, optimize_design,
    Domain, EfficiencyContext, InfoMatrix, QuadratureSettings, SamplingDesign,
};

use crate::config::{Command, ConfigError, RunConfig};
use crate::table::{num, Table};
use crate::RunError;

/// Replications used by `mc-validate` when the config gives none.
pub const DEFAULT_REPLICATIONS: usize = 1000;

pub struct Output {
    pub table: Table,
    /// Human-readable one-liner printed to stderr.
    pub summary: Option<String>,
}

impl From<Table> for Output {
    fn from(table: Table) -> Self {
        Self {
            table,
            summary: None,
        }
    }
}

pub fn run(cmd: Command, cfg: &RunConfig) -> Result<Output, RunError> {
    cfg.require(cmd)?;
    match cmd {
        Command::Moments => moments_table(cfg).map(Output::from),
        Command::Fim => fim_table(cfg).map(Output::from),
        Command::Asymptotic => asymptotic_table(cfg).map(Output::from),
        Command::Ueff => ueff_table(cfg).map(Output::from),
        Command::Optimize => optimize_table(cfg).map(Output::from),
        Command::CheckOutype => check_outype(cfg),
        Command::McValidate => mc_validate(cfg),
        Command::Figure1 => Err(RunError::Config(ConfigError::Field {
            field: "subcommand".into(),
            message: "figure1 writes a directory; use run_figure1".into(),
        })),
    }
}

/// The explicit design, or one equidistant design per entry of `n`.
fn designs(cfg: &RunConfig, domain: &Domain) -> Result<Vec<SamplingDesign>, RunError> {
    if let Some(times) = &cfg.design {
        return Ok(vec![SamplingDesign::new(times.clone(), *domain)?]);
    }
    let ns = cfg.n.as_deref().unwrap_or_default();
    Ok(ns
        .iter()
        .map(|&n| equidistant_design(domain, n))
        .collect::<ou_design::Result<_>>()?)
}

fn single_design(cfg: &RunConfig, domain: &Domain) -> Result<SamplingDesign, RunError> {
    let mut ds = designs(cfg, domain)?;
    if ds.len() != 1 {
        return Err(ConfigError::Field {
            field: "n".into(),
            message: format!("exactly one design is needed, got {}", ds.len()),
        }
        .into());
    }
    Ok(ds.remove(0))
}

pub fn matrix_table(m: &InfoMatrix) -> Table {
    let mut header = vec!["label".to_string()];
    header.extend(m.labels().iter().cloned());
    let mut t = Table::with_header(header);
    for (i, label) in m.labels().iter().enumerate() {
        let mut row = vec![label.clone()];
        row.extend((0..m.dim()).map(|j| num(m.matrix()[(i, j)])));
        t.push(row);
    }
    t
}

fn moments_table(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let theta = model.nominal().as_slice();
    let mut t = Table::new(&["t", "mean", "variance"]);
    for d in designs(cfg, &domain)? {
        for &s in d.times() {
            t.push(vec![
                num(s),
                num(moments::mean(&model, theta, s)?),
                num(moments::variance(&model, theta, s)?),
            ]);
        }
    }
    Ok(t)
}

fn fim_table(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let d = single_design(cfg, &domain)?;
    Ok(matrix_table(&fim_exact(
        &model,
        model.nominal().as_slice(),
        &d,
    )?))
}

fn asymptotic_table(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let a = fim_asymptotic(
        &model,
        model.nominal().as_slice(),
        &domain,
        &QuadratureSettings::default(),
    )?;
    Ok(matrix_table(&a.i_inf))
}

fn ueff_table(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let sel = cfg.build_selection(&model)?;
    let ctx = EfficiencyContext::new(&model, model.nominal().as_slice(), &domain, sel)?;
    let mut t = Table::new(&["n", "criterion", "ueff"]);
    for d in designs(cfg, &domain)? {
        let values = ctx.ueff_many(&d, &cfg.criteria)?;
        for (c, v) in cfg.criteria.iter().zip(values) {
            t.push(vec![d.len().to_string(), c.to_string(), num(v)]);
        }
    }
    Ok(t)
}

fn optimize_table(cfg: &RunConfig) -> Result<Table, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let sel = cfg.build_selection(&model)?;
    let theta = model.nominal().as_slice();
    let opts = cfg.optimizer_settings();
    let ctx = EfficiencyContext::new(&model, theta, &domain, sel.clone())?;
    let mut t = Table::new(&["n", "criterion", "i", "t", "value", "ueff"]);
    for &n in cfg.n.as_deref().unwrap_or_default() {
        for &c in &cfg.criteria {
            let best = optimize_design(&model, theta, n, &domain, &sel, c, &opts)?;
            let ueff = ctx.ueff(&best.design, c)?;
            for (i, &s) in best.design.times().iter().enumerate() {
                t.push(vec![
                    n.to_string(),
                    c.to_string(),
                    (i + 1).to_string(),
                    num(s),
                    num(best.value),
                    num(ueff),
                ]);
            }
        }
    }
    Ok(t)
}

fn check_outype(cfg: &RunConfig) -> Result<Output, RunError> {
    let block = cfg.outype.as_ref().expect("checked by require");
    let sde = block.build()?;
    let rep = affinity_check(&sde, &block.t_grid, &block.y_grid)?;
    let mut t = Table::new(&["t", "a", "b", "max_residual", "threshold", "is_ou_type"]);
    for i in 0..rep.t.len() {
        t.push(vec![
            num(rep.t[i]),
            num(rep.a[i]),
            num(rep.b[i]),
            num(rep.max_residual),
            num(rep.threshold),
            rep.is_ou_type.to_string(),
        ]);
    }
    let verdict = if rep.is_ou_type {
        "OU-type"
    } else {
        "not OU-type"
    };
    Ok(Output {
        table: t,
        summary: Some(format!(
            "{}: {verdict} (max residual {:.3e}, threshold {:.3e})",
            sde.name(),
            rep.max_residual,
            rep.threshold
        )),
    })
}

fn mc_validate(cfg: &RunConfig) -> Result<Output, RunError> {
    let model = cfg.build_model()?;
    let domain = cfg.build_domain()?;
    let sel = cfg.build_selection(&model)?;
    let d = single_design(cfg, &domain)?;
    let reps = cfg.replications.unwrap_or(DEFAULT_REPLICATIONS);
    let seed = cfg.seed.unwrap_or(0);
    let rep = mc_crlb_study(&model, model.nominal().as_slice(), &d, &sel, reps, seed)?;
    let mut t = Table::new(&[
        "label",
        "truth",
        "mean",
        "variance",
        "crlb",
        "variance_ratio",
    ]);
    for (i, label) in rep.labels.iter().enumerate() {
        t.push(vec![
            label.clone(),
            num(rep.truth[i]),
            num(rep.mean[i]),
            num(rep.covariance[i][i]),
            num(rep.crlb[i][i]),
            num(rep.variance_ratio[i]),
        ]);
    }
    Ok(Output {
        table: t,
        summary: Some(format!(
            "replications={} seed={} n={} non_converged={} failed={}",
            rep.replications,
            rep.seed,
            d.len(),
            rep.non_converged,
            rep.failed
        )),
    })
}
