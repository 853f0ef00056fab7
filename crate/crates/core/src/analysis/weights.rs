//! Positive weight vectors used by the Lyapunov constructions.

use nalgebra::DMatrix;

use crate::error::{NetError, Result};
use crate::network::{topological_sort, EDGE_TOL};

/// Weights `r` with `r_i > sum_j r_j p_ij` for every cell.
///
/// Cell at topological position `k` gets `2^(n-1-k)`, so every successor
/// weighs at most half of its feeder.
pub fn weights_r(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    let order = topological_sort(p)?;
    let n = p.nrows();
    let r: Vec<f64> = (0..n)
        .map(|i| 2f64.powi((n - 1 - order.rank()[i]) as i32))
        .collect();
    let margin = r_margin(p, &r);
    if !(margin > 0.0) {
        return Err(NetError::Structural(format!(
            "weight inequality fails with margin {margin}; turning rows must sum to at most 1"
        )));
    }
    Ok(r)
}

/// `min_i (r_i - sum_j r_j p_ij)`.
pub fn r_margin(p: &DMatrix<f64>, r: &[f64]) -> f64 {
    (0..r.len())
        .map(|i| r[i] - (0..r.len()).map(|j| r[j] * p[(i, j)]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

/// Weights `xi` with `sum_j p_ji G_j xi_j < L_i xi_i` for every cell.
///
/// Cells without feeders get 1; every other cell gets
/// `(2 / L_i) sum_{j feeds i} G_j xi_j`, evaluated in topological order.
pub fn weights_xi(p: &DMatrix<f64>, l: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let n = p.nrows();
    if l.len() != n || g.len() != n {
        return Err(NetError::Dimension(
            "L and G must have one entry per cell".into(),
        ));
    }
    for i in 0..n {
        if !(l[i] > 0.0 && l[i] < 1.0 && g[i] > 0.0 && g[i] <= 1.0) {
            return Err(NetError::Domain(format!(
                "cell {}: need 0 < L < 1 and 0 < G <= 1, got L = {}, G = {}",
                i + 1,
                l[i],
                g[i]
            )));
        }
    }
    let order = topological_sort(p)?;
    let mut xi = vec![0.0; n];
    for &i in order.perm() {
        let feed: f64 = (0..n)
            .filter(|&j| p[(j, i)] > EDGE_TOL)
            .map(|j| g[j] * xi[j])
            .sum();
        xi[i] = if feed > 0.0 { 2.0 / l[i] * feed } else { 1.0 };
    }
    let margin = xi_margin(p, l, g, &xi);
    if !(margin > 0.0) {
        return Err(NetError::Structural(format!(
            "xi inequality fails with margin {margin}"
        )));
    }
    Ok(xi)
}

/// `min_i (L_i xi_i - sum_j p_ji G_j xi_j)`.
pub fn xi_margin(p: &DMatrix<f64>, l: &[f64], g: &[f64], xi: &[f64]) -> f64 {
    let n = xi.len();
    (0..n)
        .map(|i| l[i] * xi[i] - (0..n).map(|j| p[(j, i)] * g[j] * xi[j]).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}
