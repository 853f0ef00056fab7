//! Uncertain demand and supply functions, the disturbance set, and
//! sampling-based audits of the demand sector conditions and the
//! uncongested-capacity condition.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::network::NetworkSpec;
use crate::sampling::halton_point;

/// Offset of the freeway branch boundary above the nominal critical density.
pub const FREEWAY_EPS: f64 = 1e-5;

/// Density at which the freeway families switch to their overcritical branch.
pub const FREEWAY_SWITCH: f64 = 55.0 + 2.0 * FREEWAY_EPS;

/// Tolerance for membership tests of disturbance vectors.
const BOX_TOL: f64 = 1e-12;

/// The basis curves from which the freeway demand families are mixed.
///
/// `k` ranges over 1..=7; any other value yields NaN.
pub fn phi(k: usize, z: f64) -> f64 {
    match k {
        1 => 5.0 / 11.0 * z,
        2 => -(13.5 / 3025.0) * z * z + 0.7 * z,
        3 => (14.0 / 3025.0) * z * z + 0.2 * z,
        4 => {
            if z <= 27.5 {
                -49.0 / 3025.0 * z * z + 0.9 * z
            } else {
                -38.0 / 3025.0 * z * z + 82.0 / 55.0 * z - 19.0
            }
        }
        5 => {
            if z <= 27.5 {
                7.0 / 756.25 * z * z + 0.2 * z
            } else {
                21.0 / 6050.0 * z * z + (71.5 / 1210.0) * z + 8.25
            }
        }
        6 => -3.0 / 23.0 * z + 740.0 / 23.0,
        7 => 83.0 / 52900.0 * z * z - 4471.0 / 10580.0 * z + 46019.0 / 1058.0,
        _ => f64::NAN,
    }
}

/// Compact box of admissible disturbance vectors `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintyBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl UncertaintyBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(NetError::Dimension(format!(
                "disturbance bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(NetError::Domain("disturbance box has lo > hi".into()));
        }
        Ok(UncertaintyBox { lo, hi })
    }

    /// The box `[0,1]^3 x [0.22, 0.30]` used by the freeway families.
    pub fn freeway() -> Self {
        UncertaintyBox {
            lo: vec![0.0, 0.0, 0.0, 0.22],
            hi: vec![1.0, 1.0, 1.0, 0.30],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, d: &[f64]) -> bool {
        d.len() == self.dim()
            && d.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(&x, (&l, &h))| x >= l - BOX_TOL && x <= h + BOX_TOL)
    }

    /// Errors unless `d` lies in the box.
    pub fn check(&self, d: &[f64]) -> Result<()> {
        if self.contains(d) {
            Ok(())
        } else {
            Err(NetError::Domain(format!(
                "disturbance {d:?} outside {:?}..{:?}",
                self.lo, self.hi
            )))
        }
    }

    pub fn centroid(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| 0.5 * (l + h))
            .collect()
    }

    /// All `2^dim` vertices of the box.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let m = self.dim();
        (0..1usize << m)
            .map(|mask| {
                (0..m)
                    .map(|k| {
                        if mask >> k & 1 == 1 {
                            self.hi[k]
                        } else {
                            self.lo[k]
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Maps a point of the unit cube into the box.
    pub fn scale(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(&t, (&l, &h))| l + (h - l) * t)
            .collect()
    }

    /// The `count` first Halton points mapped into the box.
    pub fn halton(&self, count: usize) -> Vec<Vec<f64>> {
        (1..=count as u64)
            .map(|k| self.scale(&halton_point(k, self.dim())))
            .collect()
    }

    /// All corners followed by Halton points, `count` samples in total
    /// (never fewer than the corners).
    pub fn samples_with_corners(&self, count: usize) -> Vec<Vec<f64>> {
        let mut out = self.corners();
        let extra = count.saturating_sub(out.len());
        out.extend(self.halton(extra));
        out
    }
}

/// A factor in the mixing weight of a piecewise term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// Multiply by `d[k]`.
    D(usize),
    /// Multiply by `1 - d[k]`.
    OneMinus(usize),
}

/// `scale * prod(factors) * poly(x)` with `poly` given by ascending coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    #[serde(default)]
    pub weight: Vec<Factor>,
    #[serde(default = "one")]
    pub scale: f64,
    pub coeffs: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

/// A branch of a piecewise family, used for densities up to and including `upto`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Piece {
    pub upto: f64,
    pub terms: Vec<Term>,
}

/// Shape of a demand function.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandFamily {
    /// Mainline freeway cell: `phi1, phi2, phi3` below the switch density,
    /// `phi6, phi7` above it.
    FreewayMain,
    /// On-ramp cell: `phi1, phi4, phi5` below the switch density,
    /// `phi6, phi7` above it.
    FreewayOnRamp,
    /// User-supplied piecewise polynomial family. Pieces are tried in order;
    /// the first with `x <= upto` applies, and the last piece covers the rest.
    Piecewise(Vec<Piece>),
}

impl DemandFamily {
    fn value(&self, d: &[f64], x: f64) -> f64 {
        match self {
            DemandFamily::FreewayMain | DemandFamily::FreewayOnRamp => {
                if x <= FREEWAY_SWITCH {
                    let (b, c) = if matches!(self, DemandFamily::FreewayMain) {
                        (2, 3)
                    } else {
                        (4, 5)
                    };
                    d[0] * phi(1, x)
                        + d[1] * (1.0 - d[0]) * phi(b, x)
                        + (1.0 - d[1]) * (1.0 - d[0]) * phi(c, x)
                } else {
                    d[2] * phi(6, x) + (1.0 - d[2]) * phi(7, x)
                }
            }
            DemandFamily::Piecewise(pieces) => {
                let piece = pieces
                    .iter()
                    .find(|p| x <= p.upto)
                    .or_else(|| pieces.last());
                piece.map_or(f64::NAN, |p| {
                    p.terms.iter().map(|t| term_value(t, d, x)).sum()
                })
            }
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            DemandFamily::FreewayMain => "freeway-main",
            DemandFamily::FreewayOnRamp => "freeway-onramp",
            DemandFamily::Piecewise(_) => "piecewise",
        }
    }

    /// Largest disturbance index the family reads, if any.
    fn max_d_index(&self) -> Option<usize> {
        match self {
            DemandFamily::FreewayMain | DemandFamily::FreewayOnRamp => Some(2),
            DemandFamily::Piecewise(pieces) => pieces
                .iter()
                .flat_map(|p| p.terms.iter())
                .flat_map(|t| t.weight.iter())
                .map(|f| match f {
                    Factor::D(k) | Factor::OneMinus(k) => *k,
                })
                .max(),
        }
    }
}

fn term_value(t: &Term, d: &[f64], x: f64) -> f64 {
    let w: f64 = t
        .weight
        .iter()
        .map(|f| match *f {
            Factor::D(k) => d[k],
            Factor::OneMinus(k) => 1.0 - d[k],
        })
        .product();
    let poly = t.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c);
    t.scale * w * poly
}

/// Declared constants of the demand sector conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorConstants {
    /// Critical density: demand is continuous and increasing on `[0, delta]`.
    pub delta: f64,
    /// Upper end of the interval on which the lower slope bound holds.
    pub delta_tilde: f64,
    /// Lower slope bound on `[0, delta_tilde]`.
    #[serde(rename = "L")]
    pub l: f64,
    /// Upper slope bound on `[0, delta]`.
    #[serde(rename = "G")]
    pub g: f64,
    /// Lower bound on demand over `[delta, a]`.
    pub fmin: f64,
}

/// How the supply function combines its capacity and wave terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupplyForm {
    /// `w * min(qcap, a - x)`.
    Scaled,
    /// `min(qcap, w * (a - x))`.
    Ctm,
}

/// Source of the wave coefficient `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Wave {
    /// A fixed coefficient.
    Constant(f64),
    /// The disturbance component `d[d]`.
    Disturbance { d: usize },
}

/// Supply (receiving capacity) of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupplyFunction {
    pub form: SupplyForm,
    pub qcap: f64,
    pub wave: Wave,
}

impl SupplyFunction {
    /// Freeway supply `d[3] * min(115, a - x)`.
    pub fn freeway() -> Self {
        SupplyFunction {
            form: SupplyForm::Scaled,
            qcap: 115.0,
            wave: Wave::Disturbance { d: 3 },
        }
    }

    /// Supply of a cell with capacity `a` at density `x` (unchecked).
    pub fn value(&self, d: &[f64], x: f64, a: f64) -> f64 {
        let w = match self.wave {
            Wave::Constant(c) => c,
            Wave::Disturbance { d: k } => d[k],
        };
        let room = (a - x).max(0.0);
        match self.form {
            SupplyForm::Scaled => w * self.qcap.min(room),
            SupplyForm::Ctm => self.qcap.min(w * room),
        }
    }
}

/// Demand and supply description of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDiagram {
    pub family: DemandFamily,
    pub constants: SectorConstants,
    pub supply: SupplyFunction,
}

impl CellDiagram {
    /// Demand at density `x` (unchecked).
    #[inline]
    pub fn demand(&self, d: &[f64], x: f64) -> f64 {
        self.family.value(d, x)
    }

    /// Supply at density `x` for capacity `a` (unchecked).
    #[inline]
    pub fn supply(&self, d: &[f64], x: f64, a: f64) -> f64 {
        self.supply.value(d, x, a)
    }
}

/// Per-cell diagrams plus the disturbance box they share.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagrams {
    pub domain: UncertaintyBox,
    pub cells: Vec<CellDiagram>,
}

/// JSON layout of a diagram file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagramFile {
    pub domain: UncertaintyBox,
    pub cells: Vec<CellFile>,
}

/// JSON layout of one cell in a diagram file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellFile {
    /// `"freeway-main"`, `"freeway-onramp"` or `"piecewise"`.
    pub family: String,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "G")]
    pub g: f64,
    pub delta: f64,
    pub delta_tilde: f64,
    pub fmin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<Vec<Piece>>,
    pub supply: SupplyFunction,
}

impl Diagrams {
    /// Builds and checks dimensional consistency of the diagrams.
    pub fn new(domain: UncertaintyBox, cells: Vec<CellDiagram>) -> Result<Self> {
        let m = domain.dim();
        for (i, c) in cells.iter().enumerate() {
            let needed = c.family.max_d_index();
            let wave = match c.supply.wave {
                Wave::Disturbance { d } => Some(d),
                Wave::Constant(_) => None,
            };
            for k in needed.into_iter().chain(wave) {
                if k >= m {
                    return Err(NetError::Dimension(format!(
                        "cell {} reads d[{k}] but the disturbance has {m} components",
                        i + 1
                    )));
                }
            }
            if let DemandFamily::Piecewise(p) = &c.family {
                if p.is_empty() {
                    return Err(NetError::Domain(format!("cell {} has no pieces", i + 1)));
                }
            }
        }
        Ok(Diagrams { domain, cells })
    }

    pub fn from_file(file: DiagramFile) -> Result<Self> {
        let domain = UncertaintyBox::new(file.domain.lo, file.domain.hi)?;
        let mut cells = Vec::with_capacity(file.cells.len());
        for (i, c) in file.cells.into_iter().enumerate() {
            let family = match (c.family.as_str(), c.pieces) {
                ("freeway-main", None) => DemandFamily::FreewayMain,
                ("freeway-onramp", None) => DemandFamily::FreewayOnRamp,
                ("piecewise", Some(p)) => DemandFamily::Piecewise(p),
                ("piecewise", None) => {
                    return Err(NetError::Domain(format!(
                        "cell {}: piecewise family needs a pieces table",
                        i + 1
                    )))
                }
                (other, _) => {
                    return Err(NetError::Domain(format!(
                        "cell {}: unknown or inconsistent family {other:?}",
                        i + 1
                    )))
                }
            };
            cells.push(CellDiagram {
                family,
                constants: SectorConstants {
                    delta: c.delta,
                    delta_tilde: c.delta_tilde,
                    l: c.l,
                    g: c.g,
                    fmin: c.fmin,
                },
                supply: c.supply,
            });
        }
        Diagrams::new(domain, cells)
    }

    pub fn to_file(&self) -> DiagramFile {
        DiagramFile {
            domain: self.domain.clone(),
            cells: self
                .cells
                .iter()
                .map(|c| CellFile {
                    family: c.family.tag().to_string(),
                    l: c.constants.l,
                    g: c.constants.g,
                    delta: c.constants.delta,
                    delta_tilde: c.constants.delta_tilde,
                    fmin: c.constants.fmin,
                    pieces: match &c.family {
                        DemandFamily::Piecewise(p) => Some(p.clone()),
                        _ => None,
                    },
                    supply: c.supply,
                })
                .collect(),
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Diagrams::from_file(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::io(path, e))?;
        Diagrams::from_json_str(&text)
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Errors unless there is one diagram per network cell.
    pub fn check_matches(&self, spec: &NetworkSpec) -> Result<()> {
        if self.cells.len() != spec.n() {
            return Err(NetError::Dimension(format!(
                "{} diagrams for {} cells",
                self.cells.len(),
                spec.n()
            )));
        }
        Ok(())
    }

    /// Checked demand of cell `i` with capacity `a`.
    pub fn eval_demand(&self, i: usize, d: &[f64], x: f64, a: f64) -> Result<f64> {
        self.check_point(i, d, x, a)?;
        Ok(self.cells[i].demand(d, x))
    }

    /// Checked supply of cell `i` with capacity `a`.
    pub fn eval_supply(&self, i: usize, d: &[f64], x: f64, a: f64) -> Result<f64> {
        self.check_point(i, d, x, a)?;
        Ok(self.cells[i].supply(d, x, a))
    }

    fn check_point(&self, i: usize, d: &[f64], x: f64, a: f64) -> Result<()> {
        if i >= self.cells.len() {
            return Err(NetError::Dimension(format!(
                "no diagram for cell {}",
                i + 1
            )));
        }
        if !(0.0..=a).contains(&x) {
            return Err(NetError::Domain(format!(
                "density {x} outside [0, {a}] at cell {}",
                i + 1
            )));
        }
        self.domain.check(d)
    }
}

/// Sampling resolution for the assumption audits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditGrid {
    /// Density points per interval.
    pub density_points: usize,
    /// Disturbance samples, corners included.
    pub d_samples: usize,
}

impl Default for AuditGrid {
    fn default() -> Self {
        AuditGrid {
            density_points: 512,
            d_samples: 64,
        }
    }
}

/// Result of the demand sector audit for one cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H1Report {
    /// Declared constants are in range and ordered.
    pub constants_ok: bool,
    /// Demand strictly increases between adjacent samples on `[0, delta]`.
    pub monotone_ok: bool,
    /// Empirical slopes respect the declared `L` and `G`.
    pub sector_ok: bool,
    /// Demand stays above `fmin` on `[delta, a]`.
    pub fmin_ok: bool,
    /// `0 < f(d, z) < z` on `(0, a]`.
    pub strict_bound_ok: bool,
    /// Smallest chord slope on `[0, delta_tilde]`.
    pub l_hat: f64,
    /// Largest chord slope magnitude on `[0, delta]`.
    pub g_hat: f64,
    /// Smallest demand on `[delta, a]`.
    pub fmin_hat: f64,
}

impl H1Report {
    pub fn passed(&self) -> bool {
        self.constants_ok
            && self.monotone_ok
            && self.sector_ok
            && self.fmin_ok
            && self.strict_bound_ok
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|k| {
            if k + 1 == n {
                hi
            } else {
                lo + (hi - lo) * k as f64 / (n - 1) as f64
            }
        })
        .collect()
}

/// Audits the demand sector conditions of `cell` on a sample grid.
///
/// Adjacent-sample chord slopes bound every two-point chord on the grid,
/// since a chord over several steps is an average of adjacent chords.
pub fn verify_h1(cell: &CellDiagram, a: f64, domain: &UncertaintyBox, grid: AuditGrid) -> H1Report {
    let c = cell.constants;
    let constants_ok = c.l > 0.0
        && c.l < 1.0
        && c.g > 0.0
        && c.g <= 1.0
        && c.l <= c.g
        && c.delta_tilde > 0.0
        && c.delta_tilde <= c.delta
        && c.delta <= a
        && c.fmin > 0.0;
    let sub = linspace(0.0, c.delta, grid.density_points);
    let tilde = linspace(0.0, c.delta_tilde, grid.density_points);
    let over = linspace(c.delta, a, grid.density_points);
    let ds = domain.samples_with_corners(grid.d_samples);

    struct Local {
        monotone: bool,
        strict: bool,
        l_hat: f64,
        g_hat: f64,
        fmin_hat: f64,
    }
    let locals: Vec<Local> = ds
        .par_iter()
        .map(|d| {
            let f = |z: f64| cell.demand(d, z);
            let mut monotone = true;
            let mut strict = true;
            let mut g_hat: f64 = 0.0;
            let mut prev = f(sub[0]);
            for w in sub.windows(2) {
                let cur = f(w[1]);
                if !(cur > prev) {
                    monotone = false;
                }
                g_hat = g_hat.max((cur - prev).abs() / (w[1] - w[0]));
                prev = cur;
            }
            let mut l_hat = f64::INFINITY;
            let mut prev = f(tilde[0]);
            for w in tilde.windows(2) {
                let cur = f(w[1]);
                l_hat = l_hat.min((cur - prev).abs() / (w[1] - w[0]));
                prev = cur;
            }
            let mut fmin_hat = f64::INFINITY;
            for &z in &over {
                fmin_hat = fmin_hat.min(f(z));
            }
            for &z in sub.iter().chain(&over).filter(|&&z| z > 0.0) {
                let v = f(z);
                if !(v > 0.0 && v < z) {
                    strict = false;
                }
            }
            if !(f(0.0).abs() <= 1e-12) {
                strict = false;
            }
            Local {
                monotone,
                strict,
                l_hat,
                g_hat,
                fmin_hat,
            }
        })
        .collect();

    let monotone_ok = locals.iter().all(|l| l.monotone);
    let strict_bound_ok = locals.iter().all(|l| l.strict);
    let l_hat = locals.iter().map(|l| l.l_hat).fold(f64::INFINITY, f64::min);
    let g_hat = locals.iter().map(|l| l.g_hat).fold(0.0, f64::max);
    let fmin_hat = locals
        .iter()
        .map(|l| l.fmin_hat)
        .fold(f64::INFINITY, f64::min);
    let rel = 1e-9;
    H1Report {
        constants_ok,
        monotone_ok,
        sector_ok: l_hat >= c.l * (1.0 - rel) && g_hat <= c.g * (1.0 + rel),
        fmin_ok: fmin_hat >= c.fmin * (1.0 - rel),
        strict_bound_ok,
        l_hat,
        g_hat,
        fmin_hat,
    }
}

/// Default absolute tolerance (vehicles) accepted by [`verify_h4`].
pub const H4_TOL: f64 = 1e-4;

/// Result of the uncongested-capacity audit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H4Report {
    /// Smallest `g_i - vmax_i - sum_j p_ji f_j` over all samples and cells.
    pub min_slack: f64,
    /// Cell attaining `min_slack` (0-based).
    pub worst_cell: usize,
    pub worst_d: Vec<f64>,
    pub worst_x: Vec<f64>,
    /// Number of `(d, x)` samples examined.
    pub samples: usize,
    /// `min_slack >= 0`.
    pub strict_ok: bool,
    /// Tolerance applied to the pass decision.
    pub tol: f64,
    /// `min_slack >= -tol`.
    pub passed: bool,
    /// Declared thresholds lie below `delta_tilde`.
    pub thresholds_ok: bool,
}

/// Checks `vmax_i + sum_j p_ji f_j(d, x_j) <= g_i(d, x)` for sampled
/// `(d, x)` with `0 <= x <= mu`, including the corner `x = mu`.
///
/// The decision accepts a slack down to `-tol` vehicles; the raw minimum and
/// the strict verdict are reported as well.
pub fn verify_h4(spec: &NetworkSpec, diagrams: &Diagrams, grid: AuditGrid, tol: f64) -> H4Report {
    let n = spec.n();
    let mu = spec.mu();
    let mut xs: Vec<Vec<f64>> = vec![mu.to_vec(), vec![0.0; n]];
    xs.extend(
        (1..grid.density_points as u64)
            .map(|k| halton_point(k, n.min(32)))
            .map(|u| {
                (0..n)
                    .map(|i| mu[i] * u.get(i).copied().unwrap_or(1.0))
                    .collect()
            }),
    );
    let ds = diagrams.domain.samples_with_corners(grid.d_samples);
    let preds: Vec<Vec<usize>> = (0..n).map(|i| spec.predecessors(i)).collect();

    let best = ds
        .par_iter()
        .map(|d| {
            let mut best = (f64::INFINITY, 0usize, Vec::new(), Vec::new());
            for x in &xs {
                let f: Vec<f64> = (0..n).map(|j| diagrams.cells[j].demand(d, x[j])).collect();
                for i in 0..n {
                    let demand: f64 = preds[i].iter().map(|&j| spec.p()[(j, i)] * f[j]).sum();
                    let g = diagrams.cells[i].supply(d, x[i], spec.a()[i]);
                    let slack = g - spec.vmax()[i] - demand;
                    if slack < best.0 {
                        best = (slack, i, d.clone(), x.clone());
                    }
                }
            }
            best
        })
        .reduce(
            || (f64::INFINITY, 0usize, Vec::new(), Vec::new()),
            |a, b| if b.0 < a.0 { b } else { a },
        );
    let thresholds_ok =
        (0..n).all(|i| mu[i] > 0.0 && mu[i] < diagrams.cells[i].constants.delta_tilde);
    H4Report {
        min_slack: best.0,
        worst_cell: best.1,
        worst_d: best.2,
        worst_x: best.3,
        samples: ds.len() * xs.len(),
        strict_ok: best.0 >= 0.0,
        tol,
        passed: best.0 >= -tol && thresholds_ok,
        thresholds_ok,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn main_cell() -> CellDiagram {
        presets::freeway_diagrams().cells[0].clone()
    }

    fn ramp_cell() -> CellDiagram {
        presets::freeway_diagrams().cells[4].clone()
    }

    #[test]
    fn basis_values_at_capacity() {
        for k in 1..=3 {
            assert!((phi(k, 55.0) - 25.0).abs() < 1e-12, "phi{k}");
        }
        assert!((phi(4, 27.5) - 12.5).abs() < 1e-12);
        assert!((phi(5, 27.5) - 12.5).abs() < 1e-12);
        assert!((phi(4, 55.0) - 25.0).abs() < 1e-12);
        assert!((phi(5, 55.0) - 22.0).abs() < 1e-12);
        assert!((phi(6, 170.0) - 10.0).abs() < 1e-12);
        assert!(phi(0, 1.0).is_nan());
    }

    #[test]
    fn main_family_capacity_is_disturbance_free() {
        let c = main_cell();
        for d in UncertaintyBox::freeway().samples_with_corners(64) {
            assert!((c.demand(&d, 55.0) - 25.0).abs() < 1e-12);
            assert_eq!(c.demand(&d, 0.0), 0.0);
        }
    }

    #[test]
    fn ramp_family_hand_value() {
        let c = ramp_cell();
        let v = c.demand(&[0.0, 1.0, 0.5, 0.25], 27.5);
        assert!((v - 12.5).abs() < 1e-12);
    }

    #[test]
    fn supply_examples() {
        let s = SupplyFunction::freeway();
        let d = [0.0, 0.0, 0.0, 0.25];
        assert_eq!(s.value(&d, 170.0, 170.0), 0.0);
        assert!((s.value(&d, 0.0, 170.0) - 28.75).abs() < 1e-12);
        let d = [0.0, 0.0, 0.0, 0.30];
        assert!((s.value(&d, 100.0, 170.0) - 21.0).abs() < 1e-12);
    }

    #[test]
    fn ctm_supply_form() {
        let s = SupplyFunction {
            form: SupplyForm::Ctm,
            qcap: 20.0,
            wave: Wave::Constant(0.5),
        };
        assert_eq!(s.value(&[], 0.0, 100.0), 20.0);
        assert_eq!(s.value(&[], 80.0, 100.0), 10.0);
    }

    #[test]
    fn checked_evaluation_rejects_bad_inputs() {
        let dg = presets::freeway_diagrams();
        assert!(dg
            .eval_demand(0, &[0.5, 0.5, 0.5, 0.25], 171.0, 170.0)
            .is_err());
        assert!(dg
            .eval_demand(0, &[0.5, 0.5, 0.5, 0.5], 10.0, 170.0)
            .is_err());
        assert!(dg
            .eval_supply(0, &[0.5, 0.5, 0.5, 0.25], -1.0, 170.0)
            .is_err());
        assert!(dg
            .eval_demand(0, &[0.5, 0.5, 0.5, 0.25], 55.0, 170.0)
            .is_ok());
    }

    #[test]
    fn h1_passes_for_declared_constants() {
        let dom = UncertaintyBox::freeway();
        let r = verify_h1(&main_cell(), 170.0, &dom, AuditGrid::default());
        assert!(r.passed(), "{r:?}");
        let r = verify_h1(&ramp_cell(), 170.0, &dom, AuditGrid::default());
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn h1_detects_overstated_lower_slope() {
        let mut c = main_cell();
        c.constants.l = 0.5;
        let r = verify_h1(&c, 170.0, &UncertaintyBox::freeway(), AuditGrid::default());
        assert!(!r.sector_ok);
        assert!((r.l_hat - 0.2).abs() < 1e-3);
    }

    #[test]
    fn h4_single_cell_passes() {
        let spec = NetworkSpec::new(
            vec![10.0],
            nalgebra::DMatrix::zeros(1, 1),
            vec![1.0],
            vec![4.0],
            vec![1.0],
        )
        .unwrap();
        let dg = Diagrams::new(
            UncertaintyBox::new(vec![], vec![]).unwrap(),
            vec![CellDiagram {
                family: DemandFamily::Piecewise(vec![Piece {
                    upto: 10.0,
                    terms: vec![Term {
                        weight: vec![],
                        scale: 1.0,
                        coeffs: vec![0.0, 0.5],
                    }],
                }]),
                constants: SectorConstants {
                    delta: 10.0,
                    delta_tilde: 5.0,
                    l: 0.5,
                    g: 0.5,
                    fmin: 1.0,
                },
                supply: SupplyFunction {
                    form: SupplyForm::Ctm,
                    qcap: 3.0,
                    wave: Wave::Constant(1.0),
                },
            }],
        )
        .unwrap();
        let r = verify_h4(&spec, &dg, AuditGrid::default(), 0.0);
        assert!(r.passed && r.strict_ok);
        assert!(r.min_slack >= 0.0);
    }

    #[test]
    fn h4_fails_when_merge_bound_raised() {
        let spec = presets::freeway_network();
        let mut vmax = spec.vmax().to_vec();
        vmax[6] = 30.0;
        let spec = spec.with_vmax(vmax).unwrap();
        let r = verify_h4(
            &spec,
            &presets::freeway_diagrams(),
            AuditGrid::default(),
            H4_TOL,
        );
        assert!(!r.passed);
        assert_eq!(r.worst_cell, 6);
    }

    #[test]
    fn diagram_json_roundtrip() {
        let dg = presets::freeway_diagrams();
        let text = serde_json::to_string(&dg.to_file()).unwrap();
        assert_eq!(Diagrams::from_json_str(&text).unwrap(), dg);
    }

    #[test]
    fn piecewise_json_parses() {
        let text = r#"{
            "domain": {"lo": [0.0], "hi": [1.0]},
            "cells": [{
                "family": "piecewise", "L": 0.3, "G": 0.6, "delta": 10.0,
                "delta_tilde": 10.0, "fmin": 2.0,
                "pieces": [
                    {"upto": 10.0, "terms": [
                        {"weight": [{"d": 0}], "coeffs": [0.0, 0.6]},
                        {"weight": [{"one_minus": 0}], "coeffs": [0.0, 0.3]}
                    ]},
                    {"upto": 20.0, "terms": [{"coeffs": [2.0]}]}
                ],
                "supply": {"form": "ctm", "qcap": 5.0, "wave": 0.5}
            }]
        }"#;
        let dg = Diagrams::from_json_str(text).unwrap();
        let c = &dg.cells[0];
        assert!((c.demand(&[1.0], 5.0) - 3.0).abs() < 1e-12);
        assert!((c.demand(&[0.0], 5.0) - 1.5).abs() < 1e-12);
        assert_eq!(c.demand(&[0.3], 15.0), 2.0);
        assert_eq!(c.supply(&[0.3], 15.0, 20.0), 2.5);
    }

    #[test]
    fn out_of_range_d_index_rejected() {
        let text = r#"{
            "domain": {"lo": [0.0], "hi": [1.0]},
            "cells": [{
                "family": "freeway-main", "L": 0.2, "G": 0.71, "delta": 55.00002,
                "delta_tilde": 55.00002, "fmin": 10.0,
                "supply": {"form": "scaled", "qcap": 115.0, "wave": {"d": 3}}
            }]
        }"#;
        assert!(matches!(
            Diagrams::from_json_str(text),
            Err(NetError::Dimension(_))
        ));
    }

    #[test]
    fn corners_count() {
        assert_eq!(UncertaintyBox::freeway().corners().len(), 16);
        let s = UncertaintyBox::freeway().samples_with_corners(64);
        assert_eq!(s.len(), 64);
        assert!(s.iter().all(|d| UncertaintyBox::freeway().contains(d)));
    }
}
