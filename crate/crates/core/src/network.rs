//! Static network structure: capacities, turning and exit rates, thresholds,
//! and the topological ordering of the acyclic turning graph.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};

/// Turning rates at or below this value are treated as absent edges.
pub const EDGE_TOL: f64 = 1e-15;

/// Absolute tolerance used by [`NetworkSpec::validate`].
pub const VALIDATION_TOL: f64 = 1e-12;

/// Cell count, capacities, turning matrix, exit rates, uncongested
/// thresholds and external inflow bounds of a network.
///
/// Cells are indexed from 0 in the API. `p[(i, j)]` is the fraction of the
/// outflow of cell `i` that enters cell `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    a: Vec<f64>,
    p: DMatrix<f64>,
    qexit: Vec<f64>,
    mu: Vec<f64>,
    vmax: Vec<f64>,
}

/// On-disk JSON layout of a network. `P` is a list of rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub n: usize,
    pub a: Vec<f64>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "Qexit")]
    pub qexit: Vec<f64>,
    pub mu: Vec<f64>,
    pub vmax: Vec<f64>,
}

impl NetworkSpec {
    /// Builds a spec after checking that every field has length `n`.
    ///
    /// Constraint violations (row sums, ranges) are not errors here; they
    /// are reported by [`NetworkSpec::validate`].
    pub fn new(
        a: Vec<f64>,
        p: DMatrix<f64>,
        qexit: Vec<f64>,
        mu: Vec<f64>,
        vmax: Vec<f64>,
    ) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(NetError::Dimension(
                "network must have at least one cell".into(),
            ));
        }
        if p.nrows() != n || p.ncols() != n {
            return Err(NetError::Dimension(format!(
                "P is {}x{}, expected {n}x{n}",
                p.nrows(),
                p.ncols()
            )));
        }
        for (name, v) in [("Qexit", &qexit), ("mu", &mu), ("vmax", &vmax)] {
            if v.len() != n {
                return Err(NetError::Dimension(format!(
                    "{name} has length {}, expected {n}",
                    v.len()
                )));
            }
        }
        Ok(NetworkSpec {
            a,
            p,
            qexit,
            mu,
            vmax,
        })
    }

    /// Converts the file representation, checking dimensions.
    pub fn from_file(file: NetworkFile) -> Result<Self> {
        let n = file.n;
        if file.a.len() != n {
            return Err(NetError::Dimension(format!(
                "a has length {}, expected n = {n}",
                file.a.len()
            )));
        }
        if file.p.len() != n || file.p.iter().any(|row| row.len() != n) {
            return Err(NetError::Dimension(format!(
                "P must be {n} rows of {n} entries"
            )));
        }
        let p = DMatrix::from_fn(n, n, |i, j| file.p[i][j]);
        NetworkSpec::new(file.a, p, file.qexit, file.mu, file.vmax)
    }

    /// Parses a JSON network document.
    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: NetworkFile = serde_json::from_str(s)?;
        NetworkSpec::from_file(file)
    }

    /// Reads a JSON network document from disk.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::io(path, e))?;
        NetworkSpec::from_json_str(&text)
    }

    /// File representation of this spec.
    pub fn to_file(&self) -> NetworkFile {
        let n = self.n();
        NetworkFile {
            n,
            a: self.a.clone(),
            p: (0..n)
                .map(|i| (0..n).map(|j| self.p[(i, j)]).collect())
                .collect(),
            qexit: self.qexit.clone(),
            mu: self.mu.clone(),
            vmax: self.vmax.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn qexit(&self) -> &[f64] {
        &self.qexit
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn vmax(&self) -> &[f64] {
        &self.vmax
    }

    /// Returns a copy with different thresholds `mu`.
    pub fn with_mu(&self, mu: Vec<f64>) -> Result<Self> {
        NetworkSpec::new(
            self.a.clone(),
            self.p.clone(),
            self.qexit.clone(),
            mu,
            self.vmax.clone(),
        )
    }

    /// Returns a copy with different external inflow bounds.
    pub fn with_vmax(&self, vmax: Vec<f64>) -> Result<Self> {
        NetworkSpec::new(
            self.a.clone(),
            self.p.clone(),
            self.qexit.clone(),
            self.mu.clone(),
            vmax,
        )
    }

    /// Returns a copy with different exit rates.
    pub fn with_qexit(&self, qexit: Vec<f64>) -> Result<Self> {
        NetworkSpec::new(
            self.a.clone(),
            self.p.clone(),
            qexit,
            self.mu.clone(),
            self.vmax.clone(),
        )
    }

    /// Returns a copy with a different turning matrix.
    pub fn with_p(&self, p: DMatrix<f64>) -> Result<Self> {
        NetworkSpec::new(
            self.a.clone(),
            p,
            self.qexit.clone(),
            self.mu.clone(),
            self.vmax.clone(),
        )
    }

    /// Whether cell `i` routes flow to cell `j`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.p[(i, j)] > EDGE_TOL
    }

    /// Cells feeding into `i`, in increasing index order.
    pub fn predecessors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.has_edge(j, i)).collect()
    }

    /// Cells fed by `i`, in increasing index order.
    pub fn successors(&self, i: usize) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.has_edge(i, j)).collect()
    }

    /// Lists every violated structural constraint.
    pub fn validate(&self) -> ValidationReport {
        let n = self.n();
        let mut violations = Vec::new();
        for i in 0..n {
            if !(self.a[i] > 0.0) || !self.a[i].is_finite() {
                violations.push(Violation::NonPositive {
                    field: "a",
                    cell: i,
                    value: self.a[i],
                });
            }
            if !(self.vmax[i] > 0.0) || !self.vmax[i].is_finite() {
                violations.push(Violation::NonPositive {
                    field: "vmax",
                    cell: i,
                    value: self.vmax[i],
                });
            }
            if !(self.mu[i] > 0.0 && self.mu[i] < self.a[i]) {
                violations.push(Violation::ThresholdOutOfRange {
                    cell: i,
                    mu: self.mu[i],
                    a: self.a[i],
                });
            }
            let d = self.p[(i, i)];
            if d.abs() > VALIDATION_TOL {
                violations.push(Violation::SelfLoop { cell: i, value: d });
            }
            for j in 0..n {
                let v = self.p[(i, j)];
                if !(-VALIDATION_TOL..=1.0 + VALIDATION_TOL).contains(&v) {
                    violations.push(Violation::RateOutOfRange {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
            let q = self.qexit[i];
            if !(-VALIDATION_TOL..=1.0 + VALIDATION_TOL).contains(&q) {
                violations.push(Violation::ExitOutOfRange { cell: i, value: q });
            }
            let total: f64 = self.p.row(i).sum() + q;
            let residual = 1.0 - total;
            if !(residual.abs() <= VALIDATION_TOL) {
                violations.push(Violation::RowSum { cell: i, residual });
            }
        }
        ValidationReport { violations }
    }
}

/// One violated constraint of a [`NetworkSpec`].
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// Turning plus exit rates of a row do not sum to one.
    /// `residual = 1 - (sum_j p[i][j] + Qexit[i])`.
    RowSum { cell: usize, residual: f64 },
    /// Nonzero diagonal turning rate.
    SelfLoop { cell: usize, value: f64 },
    /// Turning rate outside `[0, 1]`.
    RateOutOfRange { row: usize, col: usize, value: f64 },
    /// Exit rate outside `[0, 1]`.
    ExitOutOfRange { cell: usize, value: f64 },
    /// Threshold not strictly between 0 and the capacity.
    ThresholdOutOfRange { cell: usize, mu: f64, a: f64 },
    /// A field that must be positive is not.
    NonPositive {
        field: &'static str,
        cell: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::RowSum { cell, residual } => {
                write!(
                    f,
                    "cell {}: turning plus exit rates miss 1 by {residual:e}",
                    cell + 1
                )
            }
            Violation::SelfLoop { cell, value } => {
                write!(f, "cell {}: self turning rate {value}", cell + 1)
            }
            Violation::RateOutOfRange { row, col, value } => {
                write!(f, "p[{}][{}] = {value} outside [0, 1]", row + 1, col + 1)
            }
            Violation::ExitOutOfRange { cell, value } => {
                write!(f, "cell {}: exit rate {value} outside [0, 1]", cell + 1)
            }
            Violation::ThresholdOutOfRange { cell, mu, a } => {
                write!(f, "cell {}: threshold {mu} not in (0, {a})", cell + 1)
            }
            Violation::NonPositive { field, cell, value } => {
                write!(f, "cell {}: {field} = {value} must be positive", cell + 1)
            }
        }
    }
}

/// Outcome of [`NetworkSpec::validate`]; empty iff the network is consistent.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A topological ordering of the cells.
///
/// `order[k]` is the cell placed at position `k`; `rank[i]` is the position
/// of cell `i`. Permuting rows and columns of `P` by `order` yields a strictly
/// upper triangular matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopologicalOrder {
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl TopologicalOrder {
    fn from_order(order: Vec<usize>) -> Self {
        let mut rank = vec![0; order.len()];
        for (k, &i) in order.iter().enumerate() {
            rank[i] = k;
        }
        TopologicalOrder { order, rank }
    }

    /// Cells listed in topological order.
    pub fn perm(&self) -> &[usize] {
        &self.order
    }

    /// Position of each cell in the ordering.
    pub fn rank(&self) -> &[usize] {
        &self.rank
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// `M[order[k], order[l]]` at position `(k, l)`.
    pub fn permute(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.order.len();
        DMatrix::from_fn(n, n, |k, l| m[(self.order[k], self.order[l])])
    }

    /// Reorders a vector given in cell indexing into working order.
    pub fn to_working<T: Copy>(&self, v: &[T]) -> Vec<T> {
        self.order.iter().map(|&i| v[i]).collect()
    }

    /// Reorders a vector given in working order back to cell indexing.
    pub fn to_cells<T: Copy + Default>(&self, w: &[T]) -> Vec<T> {
        let mut out = vec![T::default(); w.len()];
        for (k, &i) in self.order.iter().enumerate() {
            out[i] = w[k];
        }
        out
    }
}

/// Orders the cells so that every edge goes forward.
///
/// Uses Kahn's algorithm, always releasing the lowest-index ready cell, so
/// the result is deterministic. Fails with a witness cycle otherwise.
pub fn topological_sort(p: &DMatrix<f64>) -> Result<TopologicalOrder> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(NetError::Dimension(format!(
            "turning matrix is {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let mut indeg = vec![0usize; n];
    for i in 0..n {
        for j in 0..n {
            if p[(i, j)] > EDGE_TOL {
                indeg[j] += 1;
            }
        }
    }
    let mut ready: BinaryHeap<Reverse<usize>> =
        (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(i)) = ready.pop() {
        order.push(i);
        for j in 0..n {
            if p[(i, j)] > EDGE_TOL {
                indeg[j] -= 1;
                if indeg[j] == 0 {
                    ready.push(Reverse(j));
                }
            }
        }
    }
    if order.len() < n {
        let cycle = find_cycle(p).unwrap_or_default();
        return Err(NetError::Acyclicity { cycle });
    }
    Ok(TopologicalOrder::from_order(order))
}

/// Returns one directed cycle `(i_1, ..., i_e)` with every consecutive rate
/// `p[i_k][i_{k+1}]` and the closing rate `p[i_e][i_1]` nonzero, or `None`.
///
/// The cycle is rotated to start at its smallest index.
pub fn find_cycle(p: &DMatrix<f64>) -> Option<Vec<usize>> {
    let n = p.nrows();
    // 0 = unvisited, 1 = on the current path, 2 = finished
    let mut color = vec![0u8; n];
    let mut path: Vec<usize> = Vec::new();
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        // explicit stack of (node, next successor to examine)
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        path.push(root);
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next < n {
                let j = *next;
                *next += 1;
                if p[(node, j)] <= EDGE_TOL {
                    continue;
                }
                match color[j] {
                    0 => {
                        color[j] = 1;
                        path.push(j);
                        stack.push((j, 0));
                    }
                    1 => {
                        let start = path.iter().position(|&c| c == j).unwrap_or(0);
                        let mut cycle = path[start..].to_vec();
                        let min_pos = cycle
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, &c)| c)
                            .map(|(k, _)| k)
                            .unwrap_or(0);
                        cycle.rotate_left(min_pos);
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                color[node] = 2;
                path.pop();
                stack.pop();
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn chain_rev() -> DMatrix<f64> {
        let mut p = DMatrix::zeros(2, 2);
        p[(1, 0)] = 1.0;
        p
    }

    fn three_cycle() -> DMatrix<f64> {
        let mut p = DMatrix::zeros(3, 3);
        p[(0, 1)] = 1.0;
        p[(1, 2)] = 1.0;
        p[(2, 0)] = 1.0;
        p
    }

    #[test]
    fn freeway_spec_validates() {
        let spec = presets::freeway_network();
        assert!(spec.validate().is_ok(), "{:?}", spec.validate());
    }

    #[test]
    fn single_exit_cell_validates() {
        let spec = NetworkSpec::new(
            vec![10.0],
            DMatrix::zeros(1, 1),
            vec![1.0],
            vec![5.0],
            vec![1.0],
        )
        .unwrap();
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn lowered_exit_rate_reports_row_four() {
        let spec = presets::freeway_network();
        let mut q = spec.qexit().to_vec();
        q[3] = 0.4;
        let spec = spec.with_qexit(q).unwrap();
        let report = spec.validate();
        assert_eq!(report.violations.len(), 1);
        match &report.violations[0] {
            Violation::RowSum { cell, residual } => {
                assert_eq!(*cell, 3);
                assert!((residual - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_structural_error() {
        let err = NetworkSpec::new(
            vec![1.0, 1.0],
            DMatrix::zeros(2, 2),
            vec![1.0],
            vec![0.5, 0.5],
            vec![1.0, 1.0],
        )
        .unwrap_err();
        assert!(matches!(err, NetError::Dimension(_)));
    }

    #[test]
    fn unknown_json_field_rejected() {
        let text = r#"{"n":1,"a":[1],"P":[[0]],"Qexit":[1],"mu":[0.5],"vmax":[1],"extra":0}"#;
        assert!(matches!(
            NetworkSpec::from_json_str(text),
            Err(NetError::Json(_))
        ));
    }

    #[test]
    fn json_roundtrip() {
        let spec = presets::freeway_network();
        let text = serde_json::to_string(&spec.to_file()).unwrap();
        assert_eq!(NetworkSpec::from_json_str(&text).unwrap(), spec);
    }

    #[test]
    fn freeway_order_is_identity() {
        let spec = presets::freeway_network();
        let order = topological_sort(spec.p()).unwrap();
        assert!(order.is_identity());
        assert_eq!(find_cycle(spec.p()), None);
    }

    #[test]
    fn reverse_chain_sorted() {
        let order = topological_sort(&chain_rev()).unwrap();
        assert_eq!(order.perm(), &[1, 0]);
        assert_eq!(order.rank(), &[1, 0]);
    }

    #[test]
    fn three_cycle_rejected_with_witness() {
        match topological_sort(&three_cycle()) {
            Err(NetError::Acyclicity { cycle }) => assert_eq!(cycle, vec![0, 1, 2]),
            other => panic!("expected cycle error, got {other:?}"),
        }
        assert_eq!(find_cycle(&three_cycle()), Some(vec![0, 1, 2]));
    }

    #[test]
    fn appended_four_cycle_found() {
        // chain 0 -> 1 -> 2, then 2 -> 3 -> 4 -> 5 -> 6 -> 3
        let mut p = DMatrix::zeros(7, 7);
        p[(0, 1)] = 1.0;
        p[(1, 2)] = 1.0;
        p[(2, 3)] = 1.0;
        p[(3, 4)] = 0.7;
        p[(4, 5)] = 0.9;
        p[(5, 6)] = 1.0;
        p[(6, 3)] = 0.3;
        let cycle = find_cycle(&p).unwrap();
        assert_eq!(cycle, vec![3, 4, 5, 6]);
        let prod: f64 = (0..cycle.len())
            .map(|k| p[(cycle[k], cycle[(k + 1) % cycle.len()])])
            .product();
        assert!(prod > 0.0);
    }

    #[test]
    fn permutation_helpers_roundtrip() {
        let order = topological_sort(&chain_rev()).unwrap();
        let v = [10.0, 20.0];
        let w = order.to_working(&v);
        assert_eq!(w, vec![20.0, 10.0]);
        assert_eq!(order.to_cells(&w), v.to_vec());
        let permuted = order.permute(&chain_rev());
        assert_eq!(permuted[(0, 1)], 1.0);
        assert_eq!(permuted[(1, 0)], 0.0);
    }
}
