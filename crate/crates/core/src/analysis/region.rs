//! Invariant region, vector Lyapunov function, and sampled checks of the
//! one-step contraction inequality.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::controller::ControllerConfig;
use crate::dynamics::Model;
use crate::error::{NetError, Result};
use crate::sampling::{stream_rng, uniform_in_box};

/// Worst excess of one sample with its state and disturbance.
type Violation = (f64, Vec<f64>, Vec<f64>);

/// Largest `eps` with `x* + eps xi <= mu`, and the corner `beta = x* + eps xi`.
///
/// The coordinate attaining the minimum is set to `mu` exactly; the others
/// are capped at `mu` against rounding.
pub fn invariant_region(xstar: &[f64], xi: &[f64], mu: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = xstar.len();
    if xi.len() != n || mu.len() != n {
        return Err(NetError::Dimension(
            "x*, xi and mu must have equal length".into(),
        ));
    }
    if let Some(i) = (0..n).find(|&i| !(xstar[i] < mu[i])) {
        return Err(NetError::Infeasible(format!(
            "x* = {} is not below mu = {} at cell {}",
            xstar[i],
            mu[i],
            i + 1
        )));
    }
    if let Some(i) = (0..n).find(|&i| !(xi[i] > 0.0)) {
        return Err(NetError::Domain(format!(
            "xi at cell {} must be positive",
            i + 1
        )));
    }
    let (arg, eps) =
        (0..n)
            .map(|i| (i, (mu[i] - xstar[i]) / xi[i]))
            .fold(
                (0, f64::INFINITY),
                |acc, c| if c.1 < acc.1 { c } else { acc },
            );
    let beta = (0..n)
        .map(|i| {
            if i == arg {
                mu[i]
            } else {
                (xstar[i] + eps * xi[i]).min(mu[i])
            }
        })
        .collect();
    Ok((eps, beta))
}

/// Whether `0 <= x <= beta` entrywise.
pub fn in_region(x: &[f64], beta: &[f64]) -> bool {
    x.iter().zip(beta).all(|(a, b)| *a <= *b)
}

/// `(max(0, x - x*), max(0, x* - x))` stacked into a `2n` vector.
pub fn lyapunov_eval(x: &[f64], xstar: &[f64]) -> Vec<f64> {
    let up = x.iter().zip(xstar).map(|(a, b)| (a - b).max(0.0));
    let down = x.iter().zip(xstar).map(|(a, b)| (b - a).max(0.0));
    up.chain(down).collect()
}

/// Largest entry of `V(x+) - Gamma V(x)` over sampled states.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub max_violation: f64,
    pub worst_x: Vec<f64>,
    pub worst_d: Vec<f64>,
    pub samples: usize,
    pub tol: f64,
    pub passed: bool,
}

/// Where [`contraction_check`] draws its states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleRegion {
    /// The invariant box `[0, beta]`, half of the samples concentrated in
    /// the thin band `[x*, beta]` where the upper components are active.
    Inside,
    /// Whole state space outside the invariant box (informational).
    Outside,
}

/// Draws a state for the contraction and saturation checks.
pub fn sample_state<R: Rng + ?Sized>(
    rng: &mut R,
    region: SampleRegion,
    xstar: &[f64],
    beta: &[f64],
    a: &[f64],
) -> Vec<f64> {
    let n = xstar.len();
    match region {
        SampleRegion::Inside => {
            let band = rng.random::<bool>();
            (0..n)
                .map(|i| {
                    if band && rng.random::<bool>() {
                        xstar[i] + (beta[i] - xstar[i]) * rng.random::<f64>()
                    } else {
                        beta[i] * rng.random::<f64>()
                    }
                })
                .collect()
        }
        SampleRegion::Outside => loop {
            let mut x = uniform_in_box(rng, &vec![0.0; n], a);
            if rng.random::<bool>() {
                // push a random coordinate just past its bound
                let i = rng.random_range(0..n);
                x[i] = beta[i] + (a[i] - beta[i]) * rng.random::<f64>().powi(8);
            }
            if !in_region(&x, beta) {
                return x;
            }
        },
    }
}

/// Sample count, seed and tolerance of a randomized check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    pub samples: usize,
    pub seed: u64,
    pub tol: f64,
}

/// Checks `V(x+) <= Gamma V(x) + tol` on `samples` random `(x, d)` under the
/// closed loop. Sample `k` uses random stream `k` of `seed`.
pub fn contraction_check(
    model: &Model,
    controller: &ControllerConfig,
    gamma: &DMatrix<f64>,
    beta: &[f64],
    region: SampleRegion,
    opts: SampleOptions,
) -> Result<ContractionReport> {
    let SampleOptions { samples, seed, tol } = opts;
    let xstar = &controller.xstar;
    let a = model.spec().a();
    let domain = &model.diagrams().domain;
    let results: Vec<Result<Violation>> = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let x = sample_state(&mut rng, region, xstar, beta, a);
            let d = uniform_in_box(&mut rng, &domain.lo, &domain.hi);
            let v = controller.control_law(&x);
            let (xn, _) = model.step(&x, &v, &d)?;
            let vx = DMatrix::from_column_slice(2 * x.len(), 1, &lyapunov_eval(&x, xstar));
            let bound = gamma * vx;
            let vn = lyapunov_eval(&xn, xstar);
            let worst = vn
                .iter()
                .zip(bound.iter())
                .map(|(a, b)| a - b)
                .fold(f64::NEG_INFINITY, f64::max);
            Ok((worst, x, d))
        })
        .collect();
    let mut best = (f64::NEG_INFINITY, Vec::new(), Vec::new());
    for r in results {
        let r = r?;
        if r.0 > best.0 {
            best = r;
        }
    }
    Ok(ContractionReport {
        max_violation: best.0,
        worst_x: best.1,
        worst_d: best.2,
        samples,
        tol,
        passed: best.0 <= tol,
    })
}

/// Empirical one-step amplification `max |x+ - x*| / |x - x*|` of the closed
/// loop over random states in the whole state space.
pub fn lipschitz_estimate(
    model: &Model,
    controller: &ControllerConfig,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    let xstar = &controller.xstar;
    let a = model.spec().a();
    let domain = &model.diagrams().domain;
    let n = xstar.len();
    let ratios: Vec<Result<f64>> = (0..samples as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream_rng(seed, k);
            let x = uniform_in_box(&mut rng, &vec![0.0; n], a);
            let d = uniform_in_box(&mut rng, &domain.lo, &domain.hi);
            let (xn, _) = model.step(&x, &controller.control_law(&x), &d)?;
            let num = dist(&xn, xstar);
            let den = dist(&x, xstar);
            Ok(if den > 0.0 { num / den } else { 0.0 })
        })
        .collect();
    let mut best: f64 = 0.0;
    for r in ratios {
        best = best.max(r?);
    }
    Ok(best)
}

/// Euclidean distance.
pub fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn region_examples() {
        let (eps, beta) = invariant_region(&[1.0, 1.0], &[1.0, 1.0], &[2.0, 3.0]).unwrap();
        assert_eq!(eps, 1.0);
        assert_eq!(beta, vec![2.0, 2.0]);
        let (eps10, beta10) = invariant_region(&[1.0, 1.0], &[10.0, 10.0], &[2.0, 3.0]).unwrap();
        assert!((eps10 - 0.1).abs() < 1e-15);
        assert_eq!(beta10, beta);
        assert!(invariant_region(&[2.0], &[1.0], &[2.0]).is_err());
    }

    #[test]
    fn lyapunov_examples() {
        assert_eq!(lyapunov_eval(&[5.0], &[5.0]), vec![0.0, 0.0]);
        assert_eq!(lyapunov_eval(&[7.0], &[5.0]), vec![2.0, 0.0]);
        assert_eq!(
            lyapunov_eval(&[3.0, 8.0], &[5.0, 5.0]),
            vec![0.0, 3.0, 2.0, 0.0]
        );
    }

    #[test]
    fn sampled_states_respect_region() {
        let mut rng = stream_rng(3, 0);
        let xs = [1.0, 2.0];
        let beta = [1.5, 2.5];
        let a = [10.0, 10.0];
        for _ in 0..1000 {
            let x = sample_state(&mut rng, SampleRegion::Inside, &xs, &beta, &a);
            assert!(in_region(&x, &beta));
            let y = sample_state(&mut rng, SampleRegion::Outside, &xs, &beta, &a);
            assert!(!in_region(&y, &beta));
            assert!(y.iter().zip(&a).all(|(v, c)| *v <= *c && *v >= 0.0));
        }
    }
}
