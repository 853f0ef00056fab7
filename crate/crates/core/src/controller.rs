//! Saturated feedback law for the external inflows and its synthesis.
//!
//! The law is
//! `v = v* - diag(v* - b) (1 - h(1 - tau^-1 K h(x - x*)))`
//! with `h` the entrywise positive part. Each inflow moves between its floor
//! `b_i` (heavy congestion) and its equilibrium value `v_i*` (no excess
//! density anywhere).

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::analysis::CertificateCore;
use crate::equilibrium::EquilibriumPair;
use crate::error::{NetError, Result};
use crate::presets;

/// Relative slack allowed when asserting the floor condition `r'b <= C min(r x*)`.
const FLOOR_CONDITION_RTOL: f64 = 1e-12;

/// Entrywise positive part.
pub fn h_map(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

/// Parameters of the feedback law.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub xstar: Vec<f64>,
    pub vstar: Vec<f64>,
    /// Inflow floor with `0 <= b <= v*`.
    pub b: Vec<f64>,
    /// Nonnegative gain matrix.
    pub k: DMatrix<f64>,
    /// Controller parameter in `(0, 1)`.
    pub tau: f64,
    /// Set when synthesis met an all-zero equilibrium inflow.
    pub trivially_stable: bool,
}

/// JSON layout of a controller file; `K` is a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerFile {
    pub xstar: Vec<f64>,
    pub vstar: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ControllerConfig {
    /// Builds a config after checking dimensions and ranges.
    pub fn new(
        xstar: Vec<f64>,
        vstar: Vec<f64>,
        b: Vec<f64>,
        k: DMatrix<f64>,
        tau: f64,
    ) -> Result<Self> {
        let n = xstar.len();
        if vstar.len() != n || b.len() != n || k.nrows() != n || k.ncols() != n {
            return Err(NetError::Dimension(format!(
                "controller for {n} cells has v* {}, b {}, K {}x{}",
                vstar.len(),
                b.len(),
                k.nrows(),
                k.ncols()
            )));
        }
        if !(tau > 0.0 && tau < 1.0) {
            return Err(NetError::Domain(format!("tau = {tau} must lie in (0, 1)")));
        }
        for i in 0..n {
            if !(b[i] >= 0.0 && b[i] <= vstar[i]) {
                return Err(NetError::Domain(format!(
                    "floor b = {} at cell {} must lie in [0, v* = {}]",
                    b[i],
                    i + 1,
                    vstar[i]
                )));
            }
        }
        if k.iter().any(|&g| !(g >= 0.0) || !g.is_finite()) {
            return Err(NetError::Domain(
                "gain entries must be finite and nonnegative".into(),
            ));
        }
        Ok(ControllerConfig {
            xstar,
            vstar,
            b,
            k,
            tau,
            trivially_stable: false,
        })
    }

    /// Uniform gain `K = gain * 1_{n x n}`.
    pub fn uniform(
        xstar: Vec<f64>,
        vstar: Vec<f64>,
        b: Vec<f64>,
        gain: f64,
        tau: f64,
    ) -> Result<Self> {
        let n = xstar.len();
        ControllerConfig::new(xstar, vstar, b, DMatrix::from_element(n, n, gain), tau)
    }

    /// The hand-tuned controller of the freeway experiments:
    /// `K = 0.016 * 1`, `tau = 1/2`, floors 0.5 on the two metered inflows.
    pub fn freeway_experiment() -> Self {
        ControllerConfig::uniform(
            presets::XSTAR.to_vec(),
            presets::VSTAR.to_vec(),
            presets::EXPERIMENT_B.to_vec(),
            presets::EXPERIMENT_GAIN,
            presets::EXPERIMENT_TAU,
        )
        .expect("experiment controller is consistent")
    }

    pub fn from_file(file: ControllerFile) -> Result<Self> {
        let n = file.xstar.len();
        if file.k.len() != n || file.k.iter().any(|r| r.len() != n) {
            return Err(NetError::Dimension(format!(
                "K must be {n} rows of {n} entries"
            )));
        }
        let k = DMatrix::from_fn(n, n, |i, j| file.k[i][j]);
        ControllerConfig::new(file.xstar, file.vstar, file.b, k, file.tau)
    }

    pub fn to_file(&self) -> ControllerFile {
        let n = self.n();
        ControllerFile {
            xstar: self.xstar.clone(),
            vstar: self.vstar.clone(),
            b: self.b.clone(),
            k: (0..n)
                .map(|i| (0..n).map(|j| self.k[(i, j)]).collect())
                .collect(),
            tau: self.tau,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        ControllerConfig::from_file(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::io(path, e))?;
        ControllerConfig::from_json_str(&text)
    }

    pub fn n(&self) -> usize {
        self.xstar.len()
    }

    /// Controlled inflows: cells whose floor lies strictly below `v*`.
    pub fn controlled(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.b[i] < self.vstar[i])
            .collect()
    }

    /// Saturation factor `max(0, 1 - tau^-1 sum_j K_ij h(x_j - x_j*))` per cell.
    pub fn saturation(&self, x: &[f64]) -> Vec<f64> {
        let excess = h_map(
            &x.iter()
                .zip(&self.xstar)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        (0..self.n())
            .map(|i| {
                let load: f64 = (0..self.n()).map(|j| self.k[(i, j)] * excess[j]).sum();
                (1.0 - load / self.tau).max(0.0)
            })
            .collect()
    }

    /// Applies the feedback law at state `x`.
    ///
    /// Returns exactly `v*_i` when the saturation factor is 1 and exactly
    /// `b_i` when it is 0.
    pub fn control_law(&self, x: &[f64]) -> Vec<f64> {
        self.saturation(x)
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s >= 1.0 {
                    self.vstar[i]
                } else if s <= 0.0 {
                    self.b[i]
                } else {
                    (self.b[i] + (self.vstar[i] - self.b[i]) * s).clamp(self.b[i], self.vstar[i])
                }
            })
            .collect()
    }

    /// Whether `r'b <= C min_i(r_i x_i*)` holds for the given constants.
    pub fn floor_condition(&self, r: &[f64], c: f64) -> FloorCondition {
        let rb: f64 = r.iter().zip(&self.b).map(|(a, b)| a * b).sum();
        let bound = c * r
            .iter()
            .zip(&self.xstar)
            .map(|(a, x)| a * x)
            .fold(f64::INFINITY, f64::min);
        FloorCondition {
            weighted_floor: rb,
            bound,
            holds: rb <= bound * (1.0 + FLOOR_CONDITION_RTOL),
        }
    }
}

/// Evaluation of the floor condition `r'b <= C min_i(r_i x_i*)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FloorCondition {
    /// `r'b`.
    pub weighted_floor: f64,
    /// `C min_i(r_i x_i*)`.
    pub bound: f64,
    pub holds: bool,
}

/// Gain matrix `K_ij = sigma^j` with 1-based column exponent.
pub fn geometric_gain(n: usize, sigma: f64) -> Result<DMatrix<f64>> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(NetError::Domain(format!(
            "sigma = {sigma} must lie in (0, 1]"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |_, j| sigma.powi(j as i32 + 1)))
}

/// Derives floor, gain and parameter from the certificate constants.
///
/// The floor is `b = lambda v*` with
/// `lambda = min(1/2, C min_i(r_i x_i*) / r'v*)`, and the gain is the
/// smallest uniform matrix with `K_ij (beta_j - x_j*) >= 1`.
pub fn synthesize(
    eq: &EquilibriumPair,
    core: &CertificateCore,
    tau: f64,
) -> Result<ControllerConfig> {
    let n = eq.xstar.len();
    if core.r.len() != n || core.beta.len() != n {
        return Err(NetError::Dimension(
            "certificate and equilibrium sizes differ".into(),
        ));
    }
    let rv: f64 = core.r.iter().zip(&eq.vstar).map(|(a, b)| a * b).sum();
    if rv == 0.0 {
        let mut cfg = ControllerConfig::new(
            eq.xstar.clone(),
            eq.vstar.clone(),
            vec![0.0; n],
            DMatrix::zeros(n, n),
            tau,
        )?;
        cfg.trivially_stable = true;
        return Ok(cfg);
    }
    if !(core.c > 0.0) {
        return Err(NetError::Infeasible(format!(
            "constant C = {} must be positive",
            core.c
        )));
    }
    let min_rx = core
        .r
        .iter()
        .zip(&eq.xstar)
        .map(|(a, x)| a * x)
        .fold(f64::INFINITY, f64::min);
    let lambda = (core.c * min_rx / rv).min(0.5);
    let b: Vec<f64> = eq.vstar.iter().map(|v| lambda * v).collect();
    let margin = core
        .beta
        .iter()
        .zip(&eq.xstar)
        .map(|(b, x)| b - x)
        .fold(f64::INFINITY, f64::min);
    if !(margin > 0.0) {
        return Err(NetError::Infeasible(
            "invariant region has no interior above x*".into(),
        ));
    }
    let cfg = ControllerConfig::uniform(eq.xstar.clone(), eq.vstar.clone(), b, 1.0 / margin, tau)?;
    let cond = cfg.floor_condition(&core.r, core.c);
    if !cond.holds {
        return Err(NetError::Structural(format!(
            "synthesized floor violates r'b <= C min(r x*): {} > {}",
            cond.weighted_floor, cond.bound
        )));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{VSTAR, XSTAR};

    #[test]
    fn positive_part() {
        assert_eq!(h_map(&[1.0, -2.0, 0.0]), vec![1.0, 0.0, 0.0]);
        assert_eq!(h_map(&[0.0; 3]), vec![0.0; 3]);
        assert_eq!(h_map(&[2.0, -4.0, 0.0]), vec![2.0, 0.0, 0.0]);
    }

    #[test]
    fn equilibrium_gives_vstar() {
        let c = ControllerConfig::freeway_experiment();
        assert_eq!(c.control_law(&XSTAR), VSTAR.to_vec());
    }

    #[test]
    fn experiment_hand_values() {
        let c = ControllerConfig::freeway_experiment();
        let mut x = XSTAR;
        x[6] += 10.0;
        let v = c.control_law(&x);
        assert!((v[0] - 17.16).abs() < 1e-12, "{}", v[0]);
        assert!((v[4] - 8.66).abs() < 1e-12, "{}", v[4]);
        for i in [1, 2, 3, 5, 6, 7] {
            assert_eq!(v[i], 0.0);
        }
        assert_eq!(c.controlled(), vec![0, 4]);
    }

    #[test]
    fn heavy_congestion_gives_floor() {
        let c = ControllerConfig::freeway_experiment();
        assert_eq!(c.control_law(&[170.0; 8]), c.b);
    }

    #[test]
    fn geometric_gain_entries() {
        let k = geometric_gain(3, 0.5).unwrap();
        assert_eq!(k[(2, 0)], 0.5);
        assert_eq!(k[(0, 2)], 0.125);
        assert!(geometric_gain(3, 0.0).is_err());
    }

    #[test]
    fn config_validation() {
        let n = 2;
        let k = DMatrix::zeros(n, n);
        assert!(
            ControllerConfig::new(vec![1.0; 2], vec![1.0; 2], vec![2.0, 0.0], k.clone(), 0.5)
                .is_err()
        );
        assert!(
            ControllerConfig::new(vec![1.0; 2], vec![1.0; 2], vec![0.5; 2], k.clone(), 1.0)
                .is_err()
        );
        assert!(ControllerConfig::new(vec![1.0; 2], vec![1.0; 2], vec![0.5; 2], k, 0.5).is_ok());
    }

    #[test]
    fn json_roundtrip() {
        let c = ControllerConfig::freeway_experiment();
        let text = serde_json::to_string(&c.to_file()).unwrap();
        assert_eq!(ControllerConfig::from_json_str(&text).unwrap(), c);
    }
}
