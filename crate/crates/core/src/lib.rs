//! Simulation and stability certificates for uncertain, discrete-time,
//! acyclic flow networks such as freeway traffic networks.
//!
//! Every cell `i` holds a density `x_i` in `[0, a_i]`. Per step it sends
//! `s_i f_i(d, x_i)` downstream, splits it by turning rates `p_ij`, and
//! accepts part of an external inflow `v_i`. The disturbance `d` ranges over
//! a compact box and perturbs demand and supply.
//!
//! The crate provides:
//! * [`network`]: structure validation and topological ordering,
//! * [`diagram`]: demand and supply families with assumption audits,
//! * [`dynamics`]: the one-step update,
//! * [`equilibrium`]: uncongested equilibria and fixed-point residuals,
//! * [`analysis`]: Lyapunov weights, comparison matrix, invariant region
//!   and trapping constants,
//! * [`controller`]: the saturated feedback law and its synthesis,
//! * [`sim`]: scenarios, decay fitting, gridlock demonstration and CSV export,
//! * [`reproduce`]: the full freeway experiment suite.

// Range checks are written as negated comparisons so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod controller;
pub mod diagram;
pub mod dynamics;
pub mod equilibrium;
pub mod error;
pub mod network;
pub mod presets;
pub mod reproduce;
pub mod sampling;
pub mod sim;

pub use error::{NetError, Result};
