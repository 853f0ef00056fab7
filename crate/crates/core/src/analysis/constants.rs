//! Constants of the weighted total-mass decay estimate and the trapping-time
//! bound derived from it.

use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::Model;
use crate::error::{NetError, Result};
use crate::sampling::halton_point;

/// Sampling options for the infimum `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaOptions {
    /// Low-discrepancy samples over disturbances, states and inflows.
    pub samples: usize,
    /// Best samples refined by pattern search.
    pub refine: usize,
    /// Margin `eps~` kept below the inflow bound `min(vmax, min_d g(d, 0))`.
    pub inflow_margin: f64,
}

impl Default for GammaOptions {
    fn default() -> Self {
        GammaOptions {
            samples: 100_000,
            refine: 16,
            inflow_margin: 1e-6,
        }
    }
}

/// The four constants of the decay estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayConstants {
    /// `min_i (1 - sum_j r_j p_ij / r_i)`.
    pub q: f64,
    /// `min_i min(L_i, fmin_i / a_i, L_i delta~_i / a_i)`.
    pub theta: f64,
    /// Sampled infimum of `sum r_i s~_i x_i / sum r_i x_i`.
    pub gamma: f64,
    /// `q theta min(1, gamma)`.
    pub c: f64,
    /// Point `(d, x, v)` attaining the sampled infimum.
    pub gamma_argmin: GammaPoint,
    /// Number of ratio evaluations spent on `gamma`.
    pub gamma_evaluations: usize,
}

/// A sample of the infimum problem.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaPoint {
    pub d: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
}

/// `min_i (1 - sum_j r_j p_ij / r_i)`.
pub fn q_const(model: &Model, r: &[f64]) -> f64 {
    let p = model.spec().p();
    (0..r.len())
        .map(|i| 1.0 - (0..r.len()).map(|j| r[j] * p[(i, j)]).sum::<f64>() / r[i])
        .fold(f64::INFINITY, f64::min)
}

/// `min_i min(L_i, fmin_i / a_i, L_i delta~_i / a_i)`.
pub fn theta_const(model: &Model) -> f64 {
    let a = model.spec().a();
    model
        .diagrams()
        .cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let k = c.constants;
            k.l.min(k.fmin / a[i]).min(k.l * k.delta_tilde / a[i])
        })
        .fold(f64::INFINITY, f64::min)
}

struct GammaProblem<'a> {
    model: &'a Model,
    r: &'a [f64],
    vhi: Vec<f64>,
    xfloor: f64,
}

impl GammaProblem<'_> {
    fn n(&self) -> usize {
        self.r.len()
    }

    fn dim(&self) -> usize {
        self.model.diagrams().domain.dim() + 2 * self.n()
    }

    /// Maps a point of the unit cube to `(d, x, v)`.
    fn decode(&self, u: &[f64]) -> GammaPoint {
        let dom = &self.model.diagrams().domain;
        let m = dom.dim();
        let n = self.n();
        let a = self.model.spec().a();
        GammaPoint {
            d: dom.scale(&u[..m]),
            x: (0..n).map(|i| a[i] * u[m + i]).collect(),
            v: (0..n).map(|i| self.vhi[i] * u[m + n + i]).collect(),
        }
    }

    /// The ratio at `u`, or `None` outside the admissible region.
    fn ratio(&self, u: &[f64]) -> Option<f64> {
        let pt = self.decode(u);
        let norm = pt.x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < self.xfloor {
            return None;
        }
        let st = self.model.lower_throttle(&pt.x, &pt.v, &pt.d).ok()?;
        let num: f64 = (0..self.n()).map(|i| self.r[i] * st[i] * pt.x[i]).sum();
        let den: f64 = (0..self.n()).map(|i| self.r[i] * pt.x[i]).sum();
        Some(num / den)
    }

    /// Coordinate pattern search inside the unit cube.
    fn refine(&self, mut u: Vec<f64>, mut best: f64) -> (Vec<f64>, f64, usize) {
        let mut h = 0.25;
        let mut evals = 0;
        while h > 1e-9 {
            let mut improved = false;
            for k in 0..u.len() {
                for sign in [-1.0, 1.0] {
                    let mut w = u.clone();
                    w[k] = (w[k] + sign * h).clamp(0.0, 1.0);
                    if w[k] == u[k] {
                        continue;
                    }
                    evals += 1;
                    if let Some(val) = self.ratio(&w) {
                        if val < best {
                            best = val;
                            u = w;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                h *= 0.5;
            }
        }
        (u, best, evals)
    }
}

/// Computes `Q`, `Theta`, the sampled `gamma` and `C = Q Theta min(1, gamma)`.
///
/// The infimum ranges over all disturbances, states with `|x|` at least
/// `eps~ / (2n)`, and inflows `0 <= v_i <= min(vmax_i, min_d g_i(d, 0)) - eps~`.
/// It is estimated from every vertex of the state and disturbance boxes with
/// inflows at their upper bound, a Halton sample of the whole region, and a
/// pattern search started from the best points. The result is an upper
/// estimate of the true infimum.
pub fn decay_constants(model: &Model, r: &[f64], opts: GammaOptions) -> Result<DecayConstants> {
    let n = model.n();
    if r.len() != n {
        return Err(NetError::Dimension("r must have one entry per cell".into()));
    }
    let q = q_const(model, r);
    let theta = theta_const(model);
    let spec = model.spec();
    let dom = &model.diagrams().domain;
    let corners_d = dom.corners();
    let vhi: Vec<f64> = (0..n)
        .map(|i| {
            let g0 = corners_d
                .iter()
                .chain(dom.halton(64).iter())
                .map(|d| model.diagrams().cells[i].supply(d, 0.0, spec.a()[i]))
                .fold(f64::INFINITY, f64::min);
            (spec.vmax()[i].min(g0) - opts.inflow_margin).max(0.0)
        })
        .collect();
    let problem = GammaProblem {
        model,
        r,
        vhi,
        xfloor: opts.inflow_margin / (2.0 * n as f64),
    };
    let dim = problem.dim();
    let m = dom.dim();

    let mut starts: Vec<Vec<f64>> = Vec::new();
    if n + m <= 16 {
        for mask in 1u64..(1u64 << n) {
            for dm in 0u64..(1u64 << m) {
                let mut u = vec![0.0; dim];
                for (k, uk) in u.iter_mut().take(m).enumerate() {
                    *uk = (dm >> k & 1) as f64;
                }
                for i in 0..n {
                    u[m + i] = (mask >> i & 1) as f64;
                    u[m + n + i] = 1.0;
                }
                starts.push(u);
            }
        }
    }
    starts.extend((1..=opts.samples as u64).map(|k| halton_point(k, dim)));

    let mut scored: Vec<(f64, usize)> = starts
        .par_iter()
        .enumerate()
        .filter_map(|(k, u)| problem.ratio(u).map(|r| (r, k)))
        .collect();
    let mut evaluations = starts.len();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    if scored.is_empty() {
        return Err(NetError::H3Violation(
            "no admissible sample for gamma".into(),
        ));
    }
    let refined: Vec<(Vec<f64>, f64, usize)> = scored
        .iter()
        .take(opts.refine.max(1))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&(val, k)| problem.refine(starts[k].clone(), val))
        .collect();
    let (mut best_u, mut best) = (starts[scored[0].1].clone(), scored[0].0);
    for (u, val, e) in refined {
        evaluations += e;
        if val < best {
            best = val;
            best_u = u;
        }
    }
    let point = problem.decode(&best_u);
    if !(best > 0.0) {
        return Err(NetError::H3Violation(format!(
            "weighted lower throttle vanishes at x = {:?}, d = {:?}, v = {:?}",
            point.x, point.d, point.v
        )));
    }
    Ok(DecayConstants {
        q,
        theta,
        gamma: best,
        c: q * theta * best.min(1.0),
        gamma_argmin: point,
        gamma_evaluations: evaluations,
    })
}

/// Number of steps after which every trajectory lies in the invariant box:
/// `floor((ln(C min_i(r_i beta_i) - r'b) - ln(C r'a)) / ln(1 - C)) + 1`.
///
/// Saturates at `u64::MAX` for astronomically large values.
pub fn trapping_bound(c: f64, r: &[f64], beta: &[f64], b: &[f64], a: &[f64]) -> Result<u64> {
    if !(c > 0.0 && c < 1.0) {
        return Err(NetError::Domain(format!("C = {c} must lie in (0, 1)")));
    }
    let dot = |u: &[f64], w: &[f64]| u.iter().zip(w).map(|(x, y)| x * y).sum::<f64>();
    let min_rb = r
        .iter()
        .zip(beta)
        .map(|(x, y)| x * y)
        .fold(f64::INFINITY, f64::min);
    let arg = c * min_rb - dot(r, b);
    if !(arg > 0.0) {
        return Err(NetError::Infeasible(format!(
            "floor too large for trapping: C min(r beta) - r'b = {arg}"
        )));
    }
    let value = ((arg.ln() - (c * dot(r, a)).ln()) / (-c).ln_1p()).floor() + 1.0;
    if value <= 0.0 {
        Ok(0)
    } else if value >= u64::MAX as f64 {
        Ok(u64::MAX)
    } else {
        Ok(value as u64)
    }
}
