//! Design construction, repair of degenerate designs, and maximisation of
//! `Φ[I_I]` by multi-start coordinate exchange on a refining grid.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::SamplingDesign;
use crate::efficiency::{criterion_value, subvector_information, Criterion};
use crate::error::{Error, Result};
use crate::fisher::SubvectorSelection;
use crate::model::{Domain, Model};

/// Points kept on each side of the incumbent in a refinement grid.
const REFINE_HALF_WIDTH: usize = 10;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub grid_size: usize,
    pub refine_rounds: usize,
    /// Defaults to `1e-6` times the domain width.
    pub min_gap: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            grid_size: 401,
            refine_rounds: 3,
            min_gap: None,
            restarts: 5,
            seed: 0,
        }
    }
}

impl OptimizerSettings {
    pub fn min_gap_for(&self, domain: &Domain) -> f64 {
        self.min_gap.unwrap_or(1e-6 * domain.width())
    }

    pub fn validate(&self, n: usize, domain: &Domain) -> Result<()> {
        if self.grid_size < n + 1 {
            return Err(Error::Settings(format!(
                "grid_size {} must be at least n + 1 = {}",
                self.grid_size,
                n + 1
            )));
        }
        let gap = self.min_gap_for(domain);
        if !(gap > 0.0 && gap.is_finite()) {
            return Err(Error::Settings(format!(
                "min_gap must be positive, got {gap}"
            )));
        }
        if self.restarts == 0 {
            return Err(Error::Settings("restarts must be at least 1".into()));
        }
        if n > 1 && domain.width() < (n - 1) as f64 * gap {
            return Err(Error::Design(format!(
                "domain of width {} cannot host {n} points {gap} apart",
                domain.width()
            )));
        }
        Ok(())
    }
}

/// `t_i = T_lo + (i-1)(T_hi - T_lo)/(n-1)` with both endpoints exact.
pub fn equidistant_design(domain: &Domain, n: usize) -> Result<SamplingDesign> {
    if n < 2 {
        return Err(Error::Design(format!(
            "equidistant design needs n >= 2, got {n}"
        )));
    }
    let (lo, hi) = (domain.lo(), domain.hi());
    let h = (hi - lo) / (n - 1) as f64;
    let mut times: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
    times[n - 1] = hi;
    SamplingDesign::new(times, *domain)
}

/// Drops coincident times and re-adds as many distinct points as were
/// dropped, each at the midpoint of the currently largest gap (the
/// stretches before the first and after the last time count as gaps;
/// ties go to the earliest).
pub fn repair_design(times: &[f64], domain: &Domain, min_gap: f64) -> Result<SamplingDesign> {
    let n = times.len();
    if n == 0 {
        return Err(Error::Design("empty design".into()));
    }
    if !(min_gap > 0.0) {
        return Err(Error::Settings(format!(
            "min_gap must be positive, got {min_gap}"
        )));
    }
    if let Some(&t) = times.iter().find(|&&t| !domain.contains(t)) {
        return Err(Error::Design(format!(
            "time {t} outside [{}, {}]",
            domain.lo(),
            domain.hi()
        )));
    }
    if n > 1 && domain.width() < (n - 1) as f64 * min_gap {
        return Err(Error::Design(format!(
            "domain of width {} cannot host {n} points {min_gap} apart",
            domain.width()
        )));
    }
    let mut pts = times.to_vec();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    while pts.len() < n {
        let mut best: Option<(f64, f64, f64)> = None; // (width, left, right)
        let mut consider = |l: f64, r: f64| {
            let w = r - l;
            if best.map_or(true, |(bw, _, _)| w > bw) {
                best = Some((w, l, r));
            }
        };
        consider(domain.lo(), pts[0]);
        for w in pts.windows(2) {
            consider(w[0], w[1]);
        }
        consider(pts[pts.len() - 1], domain.hi());
        let (w, l, r) = best.expect("at least one gap");
        if w / 2.0 < min_gap {
            return Err(Error::Design(format!(
                "no gap left to place a point at least {min_gap} from its neighbours"
            )));
        }
        let mid = 0.5 * (l + r);
        let pos = pts.partition_point(|&t| t < mid);
        pts.insert(pos, mid);
    }
    SamplingDesign::new(pts, *domain)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizedDesign {
    pub design: SamplingDesign,
    pub value: f64,
    /// Criterion value at the equidistant (or midpoint, for `n = 1`) start.
    pub start_value: f64,
}

struct Objective<'a> {
    model: &'a Model,
    theta: &'a [f64],
    domain: Domain,
    sel: &'a SubvectorSelection,
    criterion: Criterion,
}

impl Objective<'_> {
    fn value(&self, times: &[f64]) -> Result<f64> {
        let d = SamplingDesign::new(times.to_vec(), self.domain)?;
        criterion_value(
            &subvector_information(self.model, self.theta, &d, self.sel)?,
            self.criterion,
        )
    }

    /// Failed evaluations rank below every feasible value.
    fn score(&self, times: &[f64]) -> f64 {
        self.value(times).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Moves each coordinate in turn to the best candidate of its feasible
/// slice until a full sweep brings no strict improvement.
fn exchange(
    obj: &Objective<'_>,
    times: &mut [f64],
    value: &mut f64,
    min_gap: f64,
    candidates: &dyn Fn(usize, f64) -> Vec<f64>,
) {
    let n = times.len();
    let (lo, hi) = (obj.domain.lo(), obj.domain.hi());
    for _ in 0..MAX_SWEEPS {
        let mut improved = false;
        for i in 0..n {
            let left = if i == 0 { lo } else { times[i - 1] + min_gap };
            let right = if i + 1 == n {
                hi
            } else {
                times[i + 1] - min_gap
            };
            let slice: Vec<f64> = candidates(i, times[i])
                .into_iter()
                .filter(|&c| c >= left && c <= right && c != times[i])
                .collect();
            let scores: Vec<f64> = slice
                .par_iter()
                .map(|&c| {
                    let mut trial = times.to_vec();
                    trial[i] = c;
                    obj.score(&trial)
                })
                .collect();
            let mut best: Option<(f64, f64)> = None;
            for (&c, &s) in slice.iter().zip(&scores) {
                if s > *value && best.map_or(true, |(bs, _)| s > bs) {
                    best = Some((s, c));
                }
            }
            if let Some((s, c)) = best {
                times[i] = c;
                *value = s;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
}

fn random_start(rng: &mut ChaCha8Rng, grid: &[f64], n: usize, min_gap: f64) -> Option<Vec<f64>> {
    for _ in 0..1000 {
        let mut idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..grid.len())).collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() < n {
            continue;
        }
        let t: Vec<f64> = idx.iter().map(|&k| grid[k]).collect();
        if t.windows(2).all(|w| w[1] - w[0] >= min_gap) {
            return Some(t);
        }
    }
    None
}

/// Maximises `Φ[I_I(tau)]` over `n`-point designs on `domain`. The
/// equidistant design is always the first start, so the result is never
/// worse than it.
pub fn optimize_design(
    model: &Model,
    theta: &[f64],
    n: usize,
    domain: &Domain,
    sel: &SubvectorSelection,
    criterion: Criterion,
    opts: &OptimizerSettings,
) -> Result<OptimizedDesign> {
    if n == 0 {
        return Err(Error::Design("n must be at least 1".into()));
    }
    if n < sel.kept().len() {
        return Err(Error::Design(format!(
            "{n} observations cannot identify {} parameters",
            sel.kept().len()
        )));
    }
    sel.validate_for(model)?;
    opts.validate(n, domain)?;
    let min_gap = opts.min_gap_for(domain);
    let (lo, hi) = (domain.lo(), domain.hi());
    let g = opts.grid_size;
    let h0 = (hi - lo) / (g - 1) as f64;
    let mut grid: Vec<f64> = (0..g).map(|k| lo + k as f64 * h0).collect();
    grid[g - 1] = hi;

    let obj = Objective {
        model,
        theta,
        domain: *domain,
        sel,
        criterion,
    };

    let first = if n == 1 {
        vec![0.5 * (lo + hi)]
    } else {
        equidistant_design(domain, n)?.into_times()
    };
    let start_value = obj.score(&first);

    let mut starts = vec![first];
    for r in 1..opts.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        rng.set_stream(r as u64);
        if let Some(t) = random_start(&mut rng, &grid, n, min_gap) {
            starts.push(t);
        }
    }

    let runs: Vec<(Vec<f64>, f64)> = starts
        .into_iter()
        .map(|mut times| {
            let mut value = obj.score(&times);
            exchange(&obj, &mut times, &mut value, min_gap, &|_, _| grid.clone());
            let mut h = h0;
            for _ in 0..opts.refine_rounds {
                h /= REFINE_HALF_WIDTH as f64;
                let half = REFINE_HALF_WIDTH as i64;
                let local = move |_: usize, t: f64| -> Vec<f64> {
                    (-half..=half)
                        .filter(|&k| k != 0)
                        .map(|k| (t + k as f64 * h).clamp(lo, hi))
                        .collect()
                };
                exchange(&obj, &mut times, &mut value, min_gap, &local);
            }
            (times, value)
        })
        .collect();

    let mut best: Option<(Vec<f64>, f64)> = None;
    for (t, v) in runs {
        if v.is_finite() && best.as_ref().map_or(true, |(_, bv)| v > *bv) {
            best = Some((t, v));
        }
    }
    let (times, value) = best.ok_or_else(|| {
        Error::CriterionDegenerate("criterion could not be evaluated at any candidate".into())
    })?;
    debug_assert!(value >= start_value);
    Ok(OptimizedDesign {
        design: SamplingDesign::new(times, *domain)?,
        value,
        start_value,
    })
}
