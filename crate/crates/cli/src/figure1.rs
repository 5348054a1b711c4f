//! Efficiency curves of equidistant designs for the stochastic Gompertz
//! model on `[1, 2]` with `Y0 = 1`, four parameter panels, three criteria.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ou_design::{
    efficiency_curve, make_builtin_model, BuiltinModel, Criterion, Domain, SubvectorSelection,
};

use crate::table::{num, Table};
use crate::RunError;

/// `(panel, rho, delta, gamma)`.
pub const PANELS: [(char, f64, f64, f64); 4] = [
    ('a', 1.0, 1.0, 1.0),
    ('b', 3.0, 1.0, 1.0),
    ('c', 1.0, 3.0, 1.0),
    ('d', 1.0, 1.0, 3.0),
];

pub const SIZES: std::ops::RangeInclusive<usize> = 2..=30;

/// Rows `(n, ueff_D, ueff_E, ueff_A)` for `n = 2..=30`.
pub fn panel_table(rho: f64, delta: f64, gamma: f64) -> Result<Table, RunError> {
    let params: BTreeMap<String, f64> = [
        ("rho", rho),
        ("delta", delta),
        ("gamma", gamma),
        ("Y0", 1.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let model = make_builtin_model(BuiltinModel::GompertzLog, &params)?;
    let domain = Domain::new(1.0, 2.0)?;
    let sel = SubvectorSelection::from_strs(&["rho", "delta"], &["gamma"])?;
    let ns: Vec<usize> = SIZES.collect();
    let rows = efficiency_curve(
        &model,
        model.nominal().as_slice(),
        &domain,
        &sel,
        &ns,
        &Criterion::ALL,
    )?;
    let mut t = Table::new(&["n", "ueff_D", "ueff_E", "ueff_A"]);
    for r in rows {
        let mut row = vec![r.n.to_string()];
        row.extend(r.values.iter().map(|&v| num(v)));
        t.push(row);
    }
    Ok(t)
}

pub fn panel_file_name(panel: char) -> String {
    format!("figure1_{panel}.csv")
}

/// Writes one CSV per panel into `output_dir`, creating it if needed,
/// and returns the paths in panel order.
pub fn run_figure1(output_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    std::fs::create_dir_all(output_dir)?;
    let mut paths = Vec::with_capacity(PANELS.len());
    for (panel, rho, delta, gamma) in PANELS {
        let path = output_dir.join(panel_file_name(panel));
        panel_table(rho, delta, gamma)?.write_file(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
