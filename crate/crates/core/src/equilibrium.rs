//! Uncongested equilibria: flows by forward substitution along the
//! topological order, densities by inverting the increasing demand branch,
//! and fixed-point residuals for candidate congested points.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::Model;
use crate::error::{NetError, Result};
use crate::network::topological_sort;

/// Density tolerance of the branch inversion.
pub const BISECTION_TOL: f64 = 1e-10;

/// Largest spread of equilibrium densities across disturbance samples.
pub const INVARIANCE_TOL: f64 = 1e-9;

/// Disturbance samples (corners included) used to check invariance.
pub const INVARIANCE_SAMPLES: usize = 64;

/// An equilibrium pair together with its diagnostic margins.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumPair {
    pub xstar: Vec<f64>,
    pub vstar: Vec<f64>,
    /// Equilibrium flows `F_i = f_i(d, x_i*)`.
    pub flows: Vec<f64>,
    /// `min_i min_d [g_i(d, x*) - v_i* - sum_j p_ji F_j]`; positive when the
    /// equilibrium is strictly uncongested.
    pub supply_slack: f64,
    /// `min(vmax_i, min_d g_i(d, 0)) - v_i*` per cell.
    pub inflow_margin: Vec<f64>,
    /// Largest spread of the inverted densities across disturbance samples.
    pub invariance_spread: f64,
    /// `0 < x_i* < mu_i` for every cell.
    pub below_threshold: bool,
}

impl EquilibriumPair {
    /// Whether every inflow lies strictly below its admissible bound.
    pub fn inflow_strict(&self) -> bool {
        self.inflow_margin.iter().all(|&m| m > 0.0)
    }
}

/// Flows `F_i = v_i + sum_j p_ji F_j` computed along `order`, which must
/// list every upstream cell before its successors.
pub fn forward_flows(model: &Model, vstar: &[f64], order: &[usize]) -> Vec<f64> {
    let p = model.spec().p();
    let mut f = vec![0.0; vstar.len()];
    for &i in order {
        f[i] = vstar[i]
            + model
                .feeders(i)
                .iter()
                .map(|&j| p[(j, i)] * f[j])
                .sum::<f64>();
    }
    f
}

/// Smallest density `x` in `[0, hi]` with `f(x) >= target`, for an
/// increasing `f`, to within [`BISECTION_TOL`].
pub fn invert_increasing(f: impl Fn(f64) -> f64, target: f64, hi: f64) -> f64 {
    if target <= f(0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Solves the equilibrium equations `f_i(d, x_i*) = v_i* + sum_j p_ji f_j(d, x_j*)`
/// on the increasing demand branch.
///
/// Fails with [`NetError::InfeasibleInflow`] when a flow exceeds the demand
/// at the critical density, and with [`NetError::NonUniformEquilibrium`] when
/// the inverted density depends on the disturbance.
pub fn solve_uep(model: &Model, vstar: &[f64]) -> Result<EquilibriumPair> {
    let n = model.n();
    if vstar.len() != n {
        return Err(NetError::Dimension(format!(
            "v* has {} entries for {n} cells",
            vstar.len()
        )));
    }
    if let Some(i) = vstar.iter().position(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(NetError::Domain(format!(
            "v* at cell {} must be finite and nonnegative",
            i + 1
        )));
    }
    let order = topological_sort(model.spec().p())?;
    let flows = forward_flows(model, vstar, order.perm());
    let domain = &model.diagrams().domain;
    let samples = domain.samples_with_corners(INVARIANCE_SAMPLES);
    let d_ref = domain.centroid();

    let mut xstar = vec![0.0; n];
    let mut spread: f64 = 0.0;
    for i in 0..n {
        let cell = &model.diagrams().cells[i];
        let delta = cell.constants.delta;
        let capacity = cell.demand(&d_ref, delta);
        if flows[i] > capacity {
            return Err(NetError::InfeasibleInflow {
                cell: i,
                flow: flows[i],
                capacity,
            });
        }
        xstar[i] = invert_increasing(|z| cell.demand(&d_ref, z), flows[i], delta);
        let roots: Vec<f64> = samples
            .par_iter()
            .map(|d| {
                if flows[i] > cell.demand(d, delta) {
                    f64::INFINITY
                } else {
                    invert_increasing(|z| cell.demand(d, z), flows[i], delta)
                }
            })
            .collect();
        let lo = roots.iter().cloned().fold(xstar[i], f64::min);
        let hi = roots.iter().cloned().fold(xstar[i], f64::max);
        let cell_spread = hi - lo;
        if !(cell_spread <= INVARIANCE_TOL) {
            return Err(NetError::NonUniformEquilibrium {
                cell: i,
                spread: cell_spread,
            });
        }
        spread = spread.max(cell_spread);
    }

    let spec = model.spec();
    let mut supply_slack = f64::INFINITY;
    let mut g0_min = vec![f64::INFINITY; n];
    for d in &samples {
        for i in 0..n {
            let cell = &model.diagrams().cells[i];
            let attempted = vstar[i]
                + model
                    .feeders(i)
                    .iter()
                    .map(|&j| spec.p()[(j, i)] * flows[j])
                    .sum::<f64>();
            supply_slack = supply_slack.min(cell.supply(d, xstar[i], spec.a()[i]) - attempted);
            g0_min[i] = g0_min[i].min(cell.supply(d, 0.0, spec.a()[i]));
        }
    }
    let inflow_margin = (0..n)
        .map(|i| spec.vmax()[i].min(g0_min[i]) - vstar[i])
        .collect();
    let below_threshold = (0..n).all(|i| xstar[i] > 0.0 && xstar[i] < spec.mu()[i]);
    Ok(EquilibriumPair {
        xstar,
        vstar: vstar.to_vec(),
        flows,
        supply_slack,
        inflow_margin,
        invariance_spread: spread,
        below_threshold,
    })
}

/// Entrywise one-step displacement `|step(x, v, d) - x|`.
pub fn equilibrium_residual(model: &Model, x: &[f64], v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let (xn, _) = model.step(x, v, d)?;
    Ok(xn.iter().zip(x).map(|(a, b)| (a - b).abs()).collect())
}

/// Outcome of [`fit_constant_disturbance`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisturbanceFit {
    /// The full disturbance vector with the fitted component filled in.
    pub d: Vec<f64>,
    /// Largest entry of the one-step residual at the fitted disturbance.
    pub residual: f64,
}

/// Finds the value of component `k` of `d` (others fixed as in `base`) that
/// minimizes the largest one-step residual at `(x, v)`.
///
/// Scans `grid` equally spaced values over the box range of the component,
/// then refines around the best one by golden-section search.
pub fn fit_constant_disturbance(
    model: &Model,
    x: &[f64],
    v: &[f64],
    base: &[f64],
    k: usize,
    grid: usize,
) -> Result<DisturbanceFit> {
    let domain = &model.diagrams().domain;
    if k >= domain.dim() {
        return Err(NetError::Dimension(format!(
            "disturbance has no component {k}"
        )));
    }
    let (lo, hi) = (domain.lo[k], domain.hi[k]);
    let eval = |t: f64| -> Result<f64> {
        let mut d = base.to_vec();
        d[k] = t;
        let r = equilibrium_residual(model, x, v, &d)?;
        Ok(r.into_iter().fold(0.0, f64::max))
    };
    let grid = grid.max(2);
    let mut best = (f64::INFINITY, lo);
    for s in 0..grid {
        let t = lo + (hi - lo) * s as f64 / (grid - 1) as f64;
        let r = eval(t)?;
        if r < best.0 {
            best = (r, t);
        }
    }
    let step = (hi - lo) / (grid - 1) as f64;
    let (mut a, mut b) = ((best.1 - step).max(lo), (best.1 + step).min(hi));
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - ratio * (b - a);
        let e = a + ratio * (b - a);
        if eval(c)? < eval(e)? {
            b = e;
        } else {
            a = c;
        }
    }
    let t = 0.5 * (a + b);
    let r = eval(t)?;
    if r < best.0 {
        best = (r, t);
    }
    let mut d = base.to_vec();
    d[k] = best.1;
    Ok(DisturbanceFit {
        d,
        residual: best.0,
    })
}
