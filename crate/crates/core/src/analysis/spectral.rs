//! The comparison matrix of the vector Lyapunov function and its spectral
//! radius.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{NetError, Result};
use crate::network::TopologicalOrder;

/// Agreement required between the two spectral radius computations.
pub const RHO_AGREEMENT_TOL: f64 = 1e-9;

/// `A = I + P' diag(G) - diag(L)` in cell indexing.
pub fn block_a(p: &DMatrix<f64>, l: &[f64], g: &[f64]) -> DMatrix<f64> {
    let n = l.len();
    DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { 1.0 - l[i] } else { 0.0 };
        diag + p[(j, i)] * g[j]
    })
}

/// Inputs of the comparison matrix.
#[derive(Debug, Clone, Copy)]
pub struct GammaInputs<'a> {
    pub p: &'a DMatrix<f64>,
    pub l: &'a [f64],
    pub g: &'a [f64],
    pub vstar: &'a [f64],
    pub b: &'a [f64],
    pub k: &'a DMatrix<f64>,
    pub tau: f64,
}

/// The `2n x 2n` matrix `[[A, 0], [diag(v* - b) tau^-1 K, A]]` in cell indexing.
pub fn gamma_matrix(inp: &GammaInputs<'_>) -> Result<DMatrix<f64>> {
    let n = inp.l.len();
    if inp.g.len() != n || inp.vstar.len() != n || inp.b.len() != n || inp.k.shape() != (n, n) {
        return Err(NetError::Dimension(
            "comparison matrix inputs disagree in size".into(),
        ));
    }
    if !(inp.tau > 0.0) {
        return Err(NetError::Domain(format!(
            "tau = {} must be positive",
            inp.tau
        )));
    }
    let a = block_a(inp.p, inp.l, inp.g);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&a);
    m.view_mut((n, n), (n, n)).copy_from(&a);
    for i in 0..n {
        for j in 0..n {
            m[(n + i, j)] = (inp.vstar[i] - inp.b[i]) * inp.k[(i, j)] / inp.tau;
        }
    }
    Ok(m)
}

/// Spectral radius by normalized repeated squaring.
///
/// Uses `rho = lim ||M^N||^(1/N)` with `N = 2^s`, keeping the matrix scaled
/// to unit norm and accumulating the logarithm of the scale. Polynomial
/// factors from nontrivial Jordan blocks vanish as `log(N) / N`, which is
/// below double precision after 64 squarings. Returns 0 for nilpotent input.
pub fn spectral_radius_power(m: &DMatrix<f64>) -> f64 {
    let norm = |x: &DMatrix<f64>| -> f64 {
        x.row_iter()
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let abs = m.map(f64::abs);
    let n0 = norm(&abs);
    if n0 == 0.0 {
        return 0.0;
    }
    let mut b = abs / n0;
    // log ||M^(2^s)|| = log_scale
    let mut log_scale = n0.ln();
    let mut estimate = log_scale;
    for s in 0..64 {
        let sq = &b * &b;
        let ns = norm(&sq);
        if ns == 0.0 {
            return 0.0;
        }
        log_scale = 2.0 * log_scale + ns.ln();
        b = sq / ns;
        let next = log_scale / 2f64.powi(s + 1);
        if (next - estimate).abs() < 1e-17 && s > 8 {
            estimate = next;
            break;
        }
        estimate = next;
    }
    estimate.exp()
}

/// Comparison matrix with its spectral radius computed two ways.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    /// The comparison matrix in cell indexing, as a list of rows.
    #[serde(serialize_with = "serialize_rows")]
    pub gamma: DMatrix<f64>,
    /// `max_i |1 - L_i|`, the largest diagonal entry of the triangular form.
    pub rho_structural: f64,
    /// Spectral radius from repeated squaring.
    pub rho_power: f64,
}

impl SpectralReport {
    pub fn rho(&self) -> f64 {
        self.rho_structural
    }
}

fn serialize_rows<S: serde::Serializer>(
    m: &DMatrix<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for i in 0..m.nrows() {
        let row: Vec<f64> = m.row(i).iter().copied().collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

/// Builds the comparison matrix and checks that its triangular structure in
/// the working order and the power computation agree on the spectral radius.
pub fn build_gamma(inp: &GammaInputs<'_>, order: &TopologicalOrder) -> Result<SpectralReport> {
    let n = inp.l.len();
    let gamma = gamma_matrix(inp)?;
    let a = order.permute(&block_a(inp.p, inp.l, inp.g));
    for i in 0..n {
        for j in i + 1..n {
            if a[(i, j)] != 0.0 {
                return Err(NetError::Structural(format!(
                    "diagonal block not lower triangular in working order at ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    let rho_structural = inp.l.iter().map(|l| (1.0 - l).abs()).fold(0.0, f64::max);
    let rho_power = spectral_radius_power(&gamma);
    if !((rho_structural - rho_power).abs() <= RHO_AGREEMENT_TOL) {
        return Err(NetError::Structural(format!(
            "spectral radius mismatch: structural {rho_structural}, power {rho_power}"
        )));
    }
    Ok(SpectralReport {
        gamma,
        rho_structural,
        rho_power,
    })
}
