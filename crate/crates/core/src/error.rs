//! Error type shared by every module of the toolkit.

use std::path::PathBuf;

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, NetError>;

/// All failure modes surfaced by the library.
///
/// Cell indices stored in variants are 0-based; the `Display` output converts
/// them to 1-based numbering so messages match the usual cell labels.
#[derive(Debug, Error)]
pub enum NetError {
    /// Inconsistent lengths or matrix shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The turning graph contains a directed cycle.
    #[error("turning graph is cyclic; witness cycle (1-based): {}", one_based(.cycle))]
    Acyclicity { cycle: Vec<usize> },

    /// An argument lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A NaN or infinite value appeared while evaluating a cell.
    #[error("non-finite value at cell {}: {what}", .cell + 1)]
    Numerical { cell: usize, what: String },

    /// A requested equilibrium flow exceeds the largest subcritical demand.
    #[error("infeasible inflow at cell {}: flow {flow} exceeds subcritical capacity {capacity}", .cell + 1)]
    InfeasibleInflow {
        cell: usize,
        flow: f64,
        capacity: f64,
    },

    /// The equilibrium density depends on the disturbance.
    #[error("equilibrium density at cell {} varies with d by {spread:e}", .cell + 1)]
    NonUniformEquilibrium { cell: usize, spread: f64 },

    /// A construction has no admissible solution.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// An internal structural consistency check failed.
    #[error("structural check failed: {0}")]
    Structural(String),

    /// The lower throttling bound became nonpositive on a sample.
    #[error("lower throttling bound violated: {0}")]
    H3Violation(String),

    /// An operation was called on an input it does not support.
    #[error("misuse: {0}")]
    Misuse(String),

    /// File system failure, with the offending path.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed JSON input.
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    /// CSV serialization failure.
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl NetError {
    /// Wraps an I/O error together with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NetError::Io {
            path: path.into(),
            source,
        }
    }
}

fn one_based(cycle: &[usize]) -> String {
    let items: Vec<String> = cycle.iter().map(|c| (c + 1).to_string()).collect();
    format!("({})", items.join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn display_uses_one_based_cells() {
        let e = NetError::Acyclicity {
            cycle: vec![0, 1, 2],
        };
        assert_eq!(
            e.to_string(),
            "turning graph is cyclic; witness cycle (1-based): (1, 2, 3)"
        );
        let e = NetError::InfeasibleInflow {
            cell: 0,
            flow: 26.0,
            capacity: 25.0,
        };
        assert!(e.to_string().contains("cell 1"));
    }
}
