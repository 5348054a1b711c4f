//! Acceptance runner. Evaluates every criterion, prints one PASS/FAIL line
//! each (plus diagnostics), and fails at the end if any criterion failed.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ou_design::covariance::min_eigenvalue;
use ou_design::efficiency::efficiency_ratio;
use ou_design::*;
use ou_design_cli::figure1::{panel_file_name, PANELS};

struct Outcome {
    pass: bool,
    detail: String,
}

#[derive(Default)]
struct Runner {
    lines: Vec<String>,
    failed: Vec<usize>,
}

impl Runner {
    fn criterion(&mut self, id: usize, name: &str, f: impl FnOnce() -> Outcome) {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        let line = format!("{tag} [{id:>2}] {name}: {} ({secs:.2} s)", out.detail);
        println!("{line}");
        self.lines.push(line);
        if !out.pass {
            self.failed.push(id);
        }
    }

    fn diagnostic(&mut self, text: String) {
        let line = format!("     diag {text}");
        println!("{line}");
        self.lines.push(line);
    }
}

fn params(kv: &[(&str, f64)]) -> BTreeMap<String, f64> {
    kv.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn gompertz(rho: f64, delta: f64, gamma: f64) -> Model {
    make_builtin_model(
        BuiltinModel::GompertzLog,
        &params(&[
            ("rho", rho),
            ("delta", delta),
            ("gamma", gamma),
            ("Y0", 1.0),
        ]),
    )
    .unwrap()
}

fn unit() -> Domain {
    Domain::new(1.0, 2.0).unwrap()
}

fn rho_delta() -> SubvectorSelection {
    SubvectorSelection::from_strs(&["rho", "delta"], &["gamma"]).unwrap()
}

fn random_design(rng: &mut ChaCha8Rng, domain: &Domain, max_n: usize) -> SamplingDesign {
    let n = rng.random_range(1..=max_n);
    let gaps: Vec<f64> = (0..=n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = gaps.iter().sum();
    let mut acc = 0.0;
    let times = gaps[..n]
        .iter()
        .map(|g| {
            acc += g;
            domain.lo() + domain.width() * acc / total
        })
        .collect();
    SamplingDesign::new(times, *domain).unwrap()
}

fn within(limit: Duration, start: Instant) -> bool {
    start.elapsed() < limit
}

/// E-efficiency when the initial log-variance term enters the limiting
/// information with weight 1 instead of 1/2.
fn e_efficiency_weight_one(model: &Model, n: usize) -> f64 {
    let theta = model.nominal().as_slice();
    let ctx = EfficiencyContext::new(model, theta, &unit(), rho_delta()).unwrap();
    let asym = ctx.asymptotic();
    let reference = asym
        .i_inf
        .sum(&asym.initial_variance_term)
        .unwrap()
        .block(rho_delta().kept())
        .unwrap();
    let design = equidistant_design(&unit(), n).unwrap();
    let profiled = ctx.subvector_information(&design).unwrap();
    efficiency_ratio(&profiled, &reference, Criterion::E).unwrap()
}

fn panel_e_efficiency(rho: f64, delta: f64, gamma: f64, n: usize) -> f64 {
    let m = gompertz(rho, delta, gamma);
    let d = equidistant_design(&unit(), n).unwrap();
    ultimate_efficiency(&m, m.nominal().as_slice(), &d, &rho_delta(), Criterion::E).unwrap()
}

#[test]
fn acceptance_criteria() {
    let mut r = Runner::default();

    r.criterion(1, "panel d, n = 5, E-efficiency >= 0.80, < 5 s", || {
        let start = Instant::now();
        let e = panel_e_efficiency(1.0, 1.0, 3.0, 5);
        let fast = within(Duration::from_secs(5), start);
        Outcome {
            pass: e >= 0.80 && fast,
            detail: format!("ueff_E = {e:.10}"),
        }
    });
    r.criterion(2, "panel c, n = 15, E-efficiency in (0.70, 0.75)", || {
        let e = panel_e_efficiency(1.0, 3.0, 1.0, 15);
        Outcome {
            pass: e > 0.70 && e < 0.75,
            detail: format!("ueff_E = {e:.10}"),
        }
    });
    let d1 = e_efficiency_weight_one(&gompertz(1.0, 1.0, 3.0), 5);
    let c1 = e_efficiency_weight_one(&gompertz(1.0, 3.0, 1.0), 15);
    r.diagnostic(format!(
        "initial log-variance term with weight 1 instead of 1/2: panel d n=5 ueff_E = {d1:.6}, panel c n=15 ueff_E = {c1:.6}"
    ));

    r.criterion(
        3,
        "product quadratic form vs dense solve, 200 systems, rel <= 1e-10, < 10 s",
        || {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let mut worst: f64 = 0.0;
            for _ in 0..200 {
                let n = rng.random_range(1..=12);
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..3.0)).collect();
                let mut ratio = 0.0;
                let u: Vec<f64> = v
                    .iter()
                    .map(|vi| {
                        ratio += rng.random_range(0.01..1.0);
                        ratio * vi
                    })
                    .collect();
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
                let pc = ProductCovariance::from_factors(u, v).unwrap();
                let chol = pc.dense().unwrap().cholesky().unwrap();
                let (xv, yv) = (DVector::from_vec(x.clone()), DVector::from_vec(y.clone()));
                let sy = chol.solve(&yv);
                let oracle = xv.dot(&sy);
                let scale = (xv.dot(&chol.solve(&xv)) * yv.dot(&sy)).sqrt();
                let fast = quad_form_inverse(&pc, &x, &y).unwrap();
                worst = worst.max((fast - oracle).abs() / scale);
            }
            Outcome {
                pass: worst <= 1e-10 && within(Duration::from_secs(10), start),
                detail: format!("max rel error = {worst:.3e}"),
            }
        },
    );

    r.criterion(
        4,
        "Markov sum = exact FIM, 50 designs x 2 models, rel <= 1e-6, < 60 s",
        || {
            let start = Instant::now();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let mut worst: f64 = 0.0;
            for i in 0..100 {
                let m = if i % 2 == 0 {
                    gompertz(
                        rng.random_range(0.2..3.0),
                        rng.random_range(0.2..3.0),
                        rng.random_range(0.2..3.0),
                    )
                } else {
                    make_builtin_model(
                        BuiltinModel::BrownianDrift,
                        &params(&[
                            ("theta1", rng.random_range(-2.0..2.0)),
                            ("theta3", rng.random_range(0.2..3.0)),
                        ]),
                    )
                    .unwrap()
                };
                let d = random_design(&mut rng, &unit(), 8);
                let a = fim_exact(&m, m.nominal().as_slice(), &d).unwrap();
                let b = fim_markov_sum(&m, m.nominal().as_slice(), &d).unwrap();
                worst = worst.max(a.difference(&b).unwrap().max_abs() / a.max_abs());
            }
            Outcome {
                pass: worst <= 1e-6 && within(Duration::from_secs(60), start),
                detail: format!("max rel difference = {worst:.3e}"),
            }
        },
    );

    r.criterion(
        5,
        "X0-only optimum t1 = T_lo for n in {1,3,5}, variance (e^2-1)/2 to 1e-8",
        || {
            let m = make_builtin_model_with(
                BuiltinModel::MeanReversionOu,
                &params(&[("theta1", 0.0), ("theta2", 1.0), ("theta3", 1.0)]),
                ModelOptions { estimate_x0: true },
            )
            .unwrap();
            let theta = m.nominal().as_slice();
            let sel = SubvectorSelection::from_strs(&["X0"], &[]).unwrap();
            let firsts: Vec<f64> = [1, 3, 5]
                .iter()
                .map(|&n| {
                    optimize_design(
                        &m,
                        theta,
                        n,
                        &unit(),
                        &sel,
                        Criterion::E,
                        &OptimizerSettings::default(),
                    )
                    .unwrap()
                    .design
                    .times()[0]
                })
                .collect();
            let var = 1.0 / info_x0_only(&m, theta, 1.0).unwrap();
            let closed = (std::f64::consts::E.powi(2) - 1.0) / 2.0;
            Outcome {
                pass: firsts.iter().all(|&t| t == 1.0) && (var - closed).abs() <= 1e-8,
                detail: format!("t1 = {firsts:?}, variance = {var:.9} vs {closed:.9}"),
            }
        },
    );

    let gm = gompertz(1.0, 1.0, 1.0);
    let asym = fim_asymptotic(
        &gm,
        gm.nominal().as_slice(),
        &unit(),
        &QuadratureSettings::default(),
    )
    .unwrap();
    let mut corrected = Vec::new();
    r.criterion(
        6,
        "gap(4) > gap(16) > gap(64) and gap(64) < gap(4)/4, < 60 s",
        || {
            let start = Instant::now();
            let mut gaps = Vec::new();
            for n in [4, 16, 64] {
                let g = gap_matrix(&gm, gm.nominal().as_slice(), &asym, n).unwrap();
                gaps.push(g.max_abs());
                corrected.push(g.difference(&asym.volatility_cross).unwrap().max_abs());
            }
            Outcome {
                pass: gaps[0] > gaps[1]
                    && gaps[1] > gaps[2]
                    && gaps[2] < gaps[0] / 4.0
                    && within(Duration::from_secs(60), start),
                detail: format!("gap = [{:.6}, {:.6}, {:.6}]", gaps[0], gaps[1], gaps[2]),
            }
        },
    );
    r.diagnostic(format!(
        "gap after removing the finite volatility/drift cross limit {}: [{:.3e}, {:.3e}, {:.3e}]",
        format_args!(
            "(delta,gamma entry {:.6})",
            asym.volatility_cross.get("delta", "gamma").unwrap()
        ),
        corrected[0],
        corrected[1],
        corrected[2]
    ));

    r.criterion(
        7,
        "min eigenvalue of Sigma > 0, 100 random designs per builtin",
        || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let models = [
                gompertz(1.0, 1.0, 1.0),
                make_builtin_model(
                    BuiltinModel::MeanReversionOu,
                    &params(&[("theta1", 0.5), ("theta2", 2.0), ("theta3", 0.7)]),
                )
                .unwrap(),
                make_builtin_model(
                    BuiltinModel::BrownianDrift,
                    &params(&[("theta1", 0.3), ("theta3", 1.2)]),
                )
                .unwrap(),
                make_builtin_model(
                    BuiltinModel::X0Counterexample,
                    &params(&[("theta2", 2.0), ("theta3", 1.0), ("X0", 0.3)]),
                )
                .unwrap(),
            ];
            let mut worst = f64::INFINITY;
            for m in &models {
                for _ in 0..100 {
                    let d = random_design(&mut rng, &unit(), 20);
                    let pc = product_factors(m, m.nominal().as_slice(), &d).unwrap();
                    worst = worst.min(min_eigenvalue(&pc).unwrap());
                }
            }
            Outcome {
                pass: worst > 0.0,
                detail: format!("smallest eigenvalue seen = {worst:.3e}"),
            }
        },
    );

    r.criterion(
        8,
        "ueff in [0, 1+1e-8] and nondecreasing, n = 2..30, 4 panels x D/E/A",
        || {
            let ns: Vec<usize> = (2..=30).collect();
            let mut bad = Vec::new();
            let mut range = (f64::INFINITY, f64::NEG_INFINITY);
            for (panel, rho, delta, gamma) in PANELS {
                let m = gompertz(rho, delta, gamma);
                let rows = efficiency_curve(
                    &m,
                    m.nominal().as_slice(),
                    &unit(),
                    &rho_delta(),
                    &ns,
                    &Criterion::ALL,
                )
                .unwrap();
                for (k, c) in Criterion::ALL.iter().enumerate() {
                    let col: Vec<f64> = rows.iter().map(|row| row.values[k]).collect();
                    for &v in &col {
                        range = (range.0.min(v), range.1.max(v));
                    }
                    let bounded = col.iter().all(|&v| (0.0..=1.0 + 1e-8).contains(&v));
                    let monotone = col.windows(2).all(|w| w[1] >= w[0]);
                    if !(bounded && monotone) {
                        bad.push(format!("{panel}/{c}"));
                    }
                }
            }
            Outcome {
                pass: bad.is_empty(),
                detail: format!(
                    "values in [{:.6}, {:.6}], violations {bad:?}",
                    range.0, range.1
                ),
            }
        },
    );

    r.criterion(9, "Gompertz affinity a = rho - gamma^2/2, b = -delta to 1e-6; y^2 rejected, < 5 s", || {
        let start = Instant::now();
        let t_grid = [0.0, 0.5, 1.0, 1.5, 2.0];
        let y_grid = [0.2, 0.5, 0.8, 1.0, 1.5, 2.0, 3.0, 5.0];
        let mut worst: f64 = 0.0;
        let mut all_certified = true;
        for (_, rho, delta, gamma) in PANELS {
            let sde = make_nonlinear_builtin(
                NonlinearBuiltin::Gompertz,
                &params(&[("rho", rho), ("delta", delta), ("gamma", gamma)]),
            )
            .unwrap();
            let rep = affinity_check(&sde, &t_grid, &y_grid).unwrap();
            all_certified &= rep.is_ou_type;
            for (a, b) in rep.a.iter().zip(&rep.b) {
                worst = worst
                    .max((a - (rho - gamma * gamma / 2.0)).abs())
                    .max((b + delta).abs());
            }
        }
        let quad = make_nonlinear_builtin(NonlinearBuiltin::Quadratic, &BTreeMap::new()).unwrap();
        let rejected = !affinity_check(&quad, &t_grid, &[-2.0, -1.0, 0.0, 0.5, 1.0, 2.0])
            .unwrap()
            .is_ou_type;
        Outcome {
            pass: all_certified
                && worst <= 1e-6
                && rejected
                && within(Duration::from_secs(5), start),
            detail: format!(
                "certified = {all_certified}, max coefficient error = {worst:.3e}, y^2 rejected = {rejected}"
            ),
        }
    });

    r.criterion(10, "MC n = 10, R = 2000: var(delta)/CRLB in [0.85, 1.15]; var(gamma) n=40 < n=10, < 10 min", || {
        let start = Instant::now();
        let seed = 20261014;
        let theta = gm.nominal().as_slice();
        let study = |n: usize| {
            let d = equidistant_design(&unit(), n).unwrap();
            mc_crlb_study(&gm, theta, &d, &rho_delta(), 2000, seed).unwrap()
        };
        let r10 = study(10);
        let r40 = study(40);
        let i = r10.index_of("delta").unwrap();
        let ratio = r10.variance_ratio[i];
        let (g10, g40) = (r10.variance("gamma").unwrap(), r40.variance("gamma").unwrap());
        let first = (0.85..=1.15).contains(&ratio);
        let second = g40 < g10;
        Outcome {
            pass: first && second && within(Duration::from_secs(600), start),
            detail: format!(
                "delta ratio = {ratio:.4} ({}), mean delta-hat = {:.4}, var(gamma) {g10:.4} -> {g40:.4} ({}), non-converged {} / {}",
                if first { "pass" } else { "fail" },
                r10.mean[i],
                if second { "pass" } else { "fail" },
                r10.non_converged,
                r40.non_converged
            ),
        }
    });

    r.criterion(11, "figure1 output byte-identical across two runs", || {
        let bin = env!("CARGO_BIN_EXE_ou-design");
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let status = std::process::Command::new(bin)
                .args(["figure1", "--seed", "7", "--out"])
                .arg(d.path())
                .env("OU_DESIGN_THREADS", "4")
                .output()
                .unwrap()
                .status;
            assert!(status.success());
        }
        let mut identical = true;
        let mut bytes = 0;
        for (panel, ..) in PANELS {
            let name = panel_file_name(panel);
            let a = std::fs::read(dirs[0].path().join(&name)).unwrap();
            let b = std::fs::read(dirs[1].path().join(&name)).unwrap();
            bytes += a.len();
            identical &= a == b;
        }
        Outcome {
            pass: identical,
            detail: format!("4 files, {bytes} bytes, identical = {identical}"),
        }
    });

    println!(
        "summary: {} of 11 criteria pass; failing: {:?}",
        11 - r.failed.len(),
        r.failed
    );
    assert!(r.failed.is_empty(), "failing criteria: {:?}", r.failed);
}
