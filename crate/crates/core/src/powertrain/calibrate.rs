//! Fits the free polarization constants to measured stack operating points.
//!
//! The fit adjusts the ohmic resistance and the lumped Nernst offset, and
//! optionally the limiting current density and the cell count. Each anchor
//! contributes relative residuals for the quantities it pins down: stack
//! power, HHV efficiency, and whether it is the maximum-power point.

use serde::{Deserialize, Serialize};

use super::fuel_cell::FuelCellParams;
use crate::error::{Error, Result};

/// A measured operating point of the stack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolarizationAnchor {
    /// Stack current, A.
    pub current: f64,
    /// Stack power at `current`, W.
    pub power: Option<f64>,
    /// HHV efficiency at `current`, fraction.
    pub efficiency: Option<f64>,
    /// The stack power curve peaks at this current.
    #[serde(default)]
    pub max_power: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub anchors: Vec<PolarizationAnchor>,
    pub fit_i_lim: bool,
    pub fit_n_cell: bool,
    /// Largest acceptable |relative residual|.
    pub max_residual: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            anchors: vec![
                PolarizationAnchor {
                    current: 437.0,
                    power: Some(104_000.0),
                    efficiency: Some(0.4319),
                    max_power: true,
                },
                // the 15.7 kW reading at this current contradicts its own
                // efficiency under the HHV convention, so it is not fitted
                PolarizationAnchor {
                    current: 63.2,
                    power: None,
                    efficiency: Some(0.5449),
                    max_power: false,
                },
            ],
            fit_i_lim: true,
            fit_n_cell: false,
            max_residual: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub r_ohm: f64,
    pub nernst_offset: f64,
    pub n_cell: u32,
    pub i_lim: f64,
    /// Relative residuals, in the order given by `residual_labels`.
    pub residuals: Vec<f64>,
    pub residual_labels: Vec<String>,
    pub max_power_w: f64,
    pub max_power_current_a: f64,
    /// HHV efficiency at each anchor current.
    pub anchor_efficiency: Vec<f64>,
    /// Stack power at each anchor current, W.
    pub anchor_power_w: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Calibration {
    pub params: FuelCellParams,
    pub report: CalibrationReport,
}

const OUT_OF_DOMAIN: f64 = 10.0;
/// Search box for the ohmic resistance, Ω·cm².
const R_OHM_BOUNDS: (f64, f64) = (0.0, 0.6);
/// Search box for the lumped Nernst offset, V.
const OFFSET_BOUNDS: (f64, f64) = (-0.6, 0.6);

struct Problem<'a> {
    base: &'a FuelCellParams,
    opts: &'a CalibrationOptions,
}

impl Problem<'_> {
    fn params(&self, x: &[f64; 3]) -> FuelCellParams {
        let mut p = self.base.clone();
        p.r_ohm = x[0];
        p.nernst_offset = x[1];
        if self.opts.fit_i_lim {
            p.i_lim = x[2];
        }
        if self.opts.fit_n_cell {
            if let Some(n) = self.best_n_cell(&p) {
                p.n_cell = n;
            }
        }
        p
    }

    /// Cell count that best matches the first power anchor.
    fn best_n_cell(&self, p: &FuelCellParams) -> Option<u32> {
        let a = self.opts.anchors.iter().find(|a| a.power.is_some())?;
        let i = a.current / p.area_cm2;
        if i >= p.i_lim {
            return None;
        }
        let v = p.cell_voltage_unchecked(i);
        if v <= 0.0 {
            return None;
        }
        let n = (a.power? / (a.current * v)).round();
        Some(n.clamp(1.0, 100_000.0) as u32)
    }

    fn residuals(&self, p: &FuelCellParams) -> Vec<f64> {
        let needs_peak = self.opts.anchors.iter().any(|a| a.max_power);
        let peak = needs_peak.then(|| p.max_power_point());
        let mut out = Vec::new();
        for a in &self.opts.anchors {
            let i = a.current / p.area_cm2;
            let in_domain = i >= 0.0 && i < p.i_lim;
            if let Some(power) = a.power {
                out.push(if in_domain {
                    p.stack_power_unchecked(i) / power - 1.0
                } else {
                    OUT_OF_DOMAIN
                });
            }
            if let Some(eff) = a.efficiency {
                out.push(if in_domain {
                    p.cell_voltage_unchecked(i) / p.hhv_volt_equiv / eff - 1.0
                } else {
                    OUT_OF_DOMAIN
                });
            }
            if a.max_power {
                let (i_star, _) = peak.expect("computed above");
                out.push(i_star * p.area_cm2 / a.current - 1.0);
            }
        }
        out
    }

    fn labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in &self.opts.anchors {
            if a.power.is_some() {
                out.push(format!("power@{}A", a.current));
            }
            if a.efficiency.is_some() {
                out.push(format!("efficiency@{}A", a.current));
            }
            if a.max_power {
                out.push(format!("max_power_current@{}A", a.current));
            }
        }
        out
    }

    fn cost(&self, x: &[f64; 3]) -> f64 {
        let inside = |v: f64, (lo, hi): (f64, f64)| v >= lo && v <= hi;
        if !inside(x[0], R_OHM_BOUNDS) || !inside(x[1], OFFSET_BOUNDS) {
            return f64::INFINITY;
        }
        let p = self.params(x);
        if p.i_lim <= p.i0 {
            return f64::INFINITY;
        }
        let c: f64 = self.residuals(&p).iter().map(|r| r * r).sum();
        if c.is_finite() {
            c
        } else {
            f64::INFINITY
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |k| lo + (hi - lo) * k as f64 / (n - 1) as f64)
}

/// Hooke-Jeeves pattern search from `x`.
fn refine(problem: &Problem<'_>, mut x: [f64; 3], mut step: [f64; 3], dims: usize) -> [f64; 3] {
    let mut fx = problem.cost(&x);
    let explore = |base: [f64; 3], f_base: f64, step: &[f64; 3]| {
        let mut best = base;
        let mut f_best = f_base;
        for d in 0..dims {
            for dir in [1.0, -1.0] {
                let mut trial = best;
                trial[d] += dir * step[d];
                let ft = problem.cost(&trial);
                if ft < f_best {
                    best = trial;
                    f_best = ft;
                    break;
                }
            }
        }
        (best, f_best)
    };
    for _ in 0..20_000 {
        if step[..dims].iter().all(|s| *s < 1e-12) {
            break;
        }
        let (mut y, mut fy) = explore(x, fx, &step);
        if fy < fx {
            // pattern moves along the improving direction
            loop {
                let mut pattern = y;
                for d in 0..dims {
                    pattern[d] += y[d] - x[d];
                }
                x = y;
                fx = fy;
                let fp = problem.cost(&pattern);
                let (z, fz) = explore(pattern, fp, &step);
                if fz < fx {
                    y = z;
                    fy = fz;
                } else {
                    break;
                }
            }
        } else {
            for s in step.iter_mut().take(dims) {
                *s *= 0.5;
            }
        }
    }
    x
}

/// Fits `r_ohm`, `nernst_offset` (and optionally `i_lim`, `n_cell`) so the
/// stack reproduces the anchors in `opts`.
pub fn calibrate_polarization(
    base: &FuelCellParams,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    base.validate()?;
    if opts.anchors.is_empty() {
        return Err(Error::Param("calibration needs at least one anchor".into()));
    }
    if let Some(a) = opts.anchors.iter().find(|a| !(a.current > 0.0)) {
        return Err(Error::Param(format!("anchor current must be > 0, got {}", a.current)));
    }
    let problem = Problem { base, opts };
    let i_anchor_max = opts
        .anchors
        .iter()
        .map(|a| a.current / base.area_cm2)
        .fold(0.0, f64::max);

    let r_grid: Vec<f64> = linspace(R_OHM_BOUNDS.0, R_OHM_BOUNDS.1, 25).collect();
    let o_grid: Vec<f64> = linspace(OFFSET_BOUNDS.0, OFFSET_BOUNDS.1, 49).collect();
    let coarse_step = [r_grid[1] - r_grid[0], o_grid[1] - o_grid[0], 0.0];
    // the concentration term makes the peak location very sensitive to the
    // gap between i_lim and the anchors, so i_lim candidates are log-spaced
    let i_lim_grid: Vec<f64> = if opts.fit_i_lim {
        let floor = i_anchor_max.max(base.i0);
        linspace((1e-4f64).ln(), (2.0f64).ln(), 60)
            .map(|g| floor * (1.0 + g.exp()))
            .collect()
    } else {
        vec![base.i_lim]
    };

    let mut best = ([base.r_ohm, base.nernst_offset, base.i_lim], f64::INFINITY);
    for &i_lim in &i_lim_grid {
        let mut local = ([0.0, 0.0, i_lim], f64::INFINITY);
        for &r in &r_grid {
            for &o in &o_grid {
                let x = [r, o, i_lim];
                let c = problem.cost(&x);
                if c < local.1 {
                    local = (x, c);
                }
            }
        }
        if !local.1.is_finite() {
            continue;
        }
        let x = refine(&problem, local.0, coarse_step, 2);
        let c = problem.cost(&x);
        if c < best.1 {
            best = (x, c);
        }
    }
    let x = if opts.fit_i_lim {
        let step = [coarse_step[0] / 8.0, coarse_step[1] / 8.0, (best.0[2] - i_anchor_max) / 4.0];
        refine(&problem, best.0, step, 3)
    } else {
        best.0
    };
    let params = problem.params(&x);
    let residuals = problem.residuals(&params);
    let worst = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if !(worst <= opts.max_residual) {
        return Err(Error::Calibration {
            worst,
            limit: opts.max_residual,
            residuals,
        });
    }
    let (i_star, p_star) = params.max_power_point();
    let report = CalibrationReport {
        r_ohm: params.r_ohm,
        nernst_offset: params.nernst_offset,
        n_cell: params.n_cell,
        i_lim: params.i_lim,
        residual_labels: problem.labels(),
        residuals,
        max_power_w: p_star,
        max_power_current_a: i_star * params.area_cm2,
        anchor_efficiency: opts
            .anchors
            .iter()
            .map(|a| params.cell_voltage_unchecked(a.current / params.area_cm2) / params.hhv_volt_equiv)
            .collect(),
        anchor_power_w: opts
            .anchors
            .iter()
            .map(|a| params.stack_power_unchecked(a.current / params.area_cm2))
            .collect(),
    };
    Ok(Calibration { params, report })
}
