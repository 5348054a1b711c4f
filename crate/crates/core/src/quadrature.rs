//! Globally adaptive Gauss-Kronrod (G7/K15) quadrature.
//!
//! Integrands may be vector-valued; the error estimate of a panel is the
//! largest component-wise difference between the Kronrod and Gauss sums, and
//! the panel with the largest estimate is bisected until the summed estimate
//! meets `max(abs_tol, rel_tol * |I|_max)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureSettings {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSettings {
    fn default() -> Self {
        Self {
            abs_tol: 1e-10,
            rel_tol: 1e-8,
            max_subdivisions: 2000,
        }
    }
}

impl QuadratureSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(Error::Settings(
                "quadrature tolerances must be positive".into(),
            ));
        }
        if self.max_subdivisions < 10 {
            return Err(Error::Settings(
                "max_subdivisions must be at least 10".into(),
            ));
        }
        Ok(())
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod_panel<F>(f: &mut F, a: f64, b: f64, dim: usize) -> Result<Panel>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kron = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    let mut eval = |x: f64| -> Result<Vec<f64>> {
        let v = f(x)?;
        if v.len() != dim {
            return Err(Error::Dimension(format!(
                "integrand returned {} components, expected {dim}",
                v.len()
            )));
        }
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite {
                what: "integrand",
                t: x,
            });
        }
        Ok(v)
    };

    let fc = eval(centre)?;
    for k in 0..dim {
        kron[k] = WGK[7] * fc[k];
        gauss[k] = WG[3] * fc[k];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = eval(centre - dx)?;
        let f2 = eval(centre + dx)?;
        for k in 0..dim {
            let s = f1[k] + f2[k];
            kron[k] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[k] += WG[j / 2] * s;
            }
        }
    }
    let mut error = 0.0_f64;
    for k in 0..dim {
        kron[k] *= half;
        gauss[k] *= half;
        error = error.max((kron[k] - gauss[k]).abs());
    }
    Ok(Panel {
        a,
        b,
        value: kron,
        error,
    })
}

/// Integrates a vector-valued function of dimension `dim` over `[a, b]`.
pub fn integrate_vec<F>(
    mut f: F,
    a: f64,
    b: f64,
    dim: usize,
    settings: &QuadratureSettings,
) -> Result<Vec<f64>>
where
    F: FnMut(f64) -> Result<Vec<f64>>,
{
    if a == b {
        return Ok(vec![0.0; dim]);
    }
    if b < a {
        let v = integrate_vec(f, b, a, dim, settings)?;
        return Ok(v.into_iter().map(|x| -x).collect());
    }

    let first = kronrod_panel(&mut f, a, b, dim)?;
    let mut total = first.value.clone();
    let mut total_err = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    loop {
        let scale = total.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let target = settings.abs_tol.max(settings.rel_tol * scale);
        if total_err <= target {
            return Ok(total);
        }
        if heap.len() >= settings.max_subdivisions {
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: target,
            });
        }
        let worst = heap.pop().expect("heap holds at least one panel");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            // Panel width at machine resolution; nothing left to refine.
            return Err(Error::Quadrature {
                achieved: total_err,
                requested: target,
            });
        }
        let left = kronrod_panel(&mut f, worst.a, mid, dim)?;
        let right = kronrod_panel(&mut f, mid, worst.b, dim)?;
        for k in 0..dim {
            total[k] += left.value[k] + right.value[k] - worst.value[k];
        }
        total_err += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, settings: &QuadratureSettings) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    integrate_vec(|x| f(x).map(|v| vec![v]), a, b, 1, settings).map(|v| v[0])
}
