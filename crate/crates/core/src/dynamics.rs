//! One-step conservation dynamics with supply-limited inflows.
//!
//! The update is
//! `x+_i = x_i + w_i v_i - s_i f_i + sum_j p_ji s_j f_j`,
//! where the throttles `s` and acceptances `w` come from a
//! [`JunctionModel`]. The default [`PriorityJunction`] gives external inflows
//! full priority and lets mainline feeders fill the remaining supply in a
//! fixed priority order.

use serde::Serialize;

use crate::diagram::Diagrams;
use crate::error::{NetError, Result};
use crate::network::NetworkSpec;

/// Demands below this value at a nonempty cell are treated as "nothing to throttle".
pub const TINY_DEMAND: f64 = 1e-12;

/// Throttles and accepted external inflows chosen by a junction model.
#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    /// Outflow throttle `s_i` in `[0, 1]`.
    pub s: Vec<f64>,
    /// Accepted external inflow `w_i v_i`.
    pub accepted: Vec<f64>,
}

/// Resolves congestion at the junctions: given the state, inflow requests,
/// demands and supplies, returns throttles and accepted inflows.
///
/// Implementations must keep every accepted inflow plus the actual feeder
/// flows into a cell within that cell's supply, so that states remain in
/// the box `[0, a]`.
pub trait JunctionModel: Sync {
    fn resolve(
        &self,
        model: &Model,
        x: &[f64],
        v: &[f64],
        demand: &[f64],
        supply: &[f64],
    ) -> Junction;
}

/// External inflow first, then feeders by descending turning rate, ties
/// broken by descending cell index.
///
/// On a simple chain this reduces to
/// `s_i = min(1, max(0, g_{i+1} - v_{i+1}) / (p_{i,i+1} f_i))`; at a merge the
/// higher-priority feeder's attempted flow is subtracted from the supply
/// before the next feeder is served.
#[derive(Debug, Clone, Copy, Default)]
pub struct PriorityJunction;

impl JunctionModel for PriorityJunction {
    fn resolve(
        &self,
        model: &Model,
        x: &[f64],
        v: &[f64],
        demand: &[f64],
        supply: &[f64],
    ) -> Junction {
        let n = x.len();
        let accepted: Vec<f64> = (0..n).map(|i| v[i].min(supply[i])).collect();
        let remaining: Vec<f64> = (0..n).map(|i| supply[i] - accepted[i]).collect();
        let alloc = model.allocate(&remaining, demand);
        let s = model.throttles(x, demand, &alloc, |j| demand[j]);
        Junction { s, accepted }
    }
}

/// Per-cell flows of one step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowBreakdown {
    /// Actual outflow `s_i f_i`.
    pub outflow: Vec<f64>,
    /// Accepted external inflow plus actual feeder flows.
    pub inflow: Vec<f64>,
    /// Flow leaving the network, `Q_i s_i f_i`.
    pub exit: Vec<f64>,
    pub s: Vec<f64>,
    /// Fraction of the requested external inflow that was accepted (1 if none requested).
    pub w: Vec<f64>,
    /// Demand `f_i(d, x_i)`.
    pub attempted_demand: Vec<f64>,
    /// Accepted external inflow `w_i v_i`.
    pub accepted: Vec<f64>,
    /// Supply `g_i(d, x)`.
    pub supply: Vec<f64>,
}

impl FlowBreakdown {
    /// `|sum x+ - sum x - (sum accepted - sum exit)|`.
    pub fn mass_balance_residual(&self, x: &[f64], xnext: &[f64]) -> f64 {
        let before: f64 = x.iter().sum();
        let after: f64 = xnext.iter().sum();
        let added: f64 = self.accepted.iter().sum();
        let removed: f64 = self.exit.iter().sum();
        (after - before - (added - removed)).abs()
    }
}

/// Network plus diagrams with the junction bookkeeping precomputed.
///
/// Cyclic networks are accepted so that gridlock can be simulated; analysis
/// routines that need acyclicity check it themselves.
#[derive(Debug, Clone)]
pub struct Model {
    spec: NetworkSpec,
    diagrams: Diagrams,
    feeders: Vec<Vec<usize>>,
    successors: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(spec: NetworkSpec, diagrams: Diagrams) -> Result<Self> {
        diagrams.check_matches(&spec)?;
        let n = spec.n();
        let feeders = (0..n)
            .map(|i| {
                let mut f = spec.predecessors(i);
                f.sort_by(|&a, &b| {
                    spec.p()[(b, i)]
                        .partial_cmp(&spec.p()[(a, i)])
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(b.cmp(&a))
                });
                f
            })
            .collect();
        let successors = (0..n).map(|i| spec.successors(i)).collect();
        Ok(Model {
            spec,
            diagrams,
            feeders,
            successors,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn diagrams(&self) -> &Diagrams {
        &self.diagrams
    }

    pub fn n(&self) -> usize {
        self.spec.n()
    }

    /// Feeders of cell `i` in service order.
    pub fn feeders(&self, i: usize) -> &[usize] {
        &self.feeders[i]
    }

    fn check_inputs(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<()> {
        let n = self.n();
        if x.len() != n || v.len() != n {
            return Err(NetError::Dimension(format!(
                "state has {} and inflow {} entries for {n} cells",
                x.len(),
                v.len()
            )));
        }
        for i in 0..n {
            if !(0.0..=self.spec.a()[i]).contains(&x[i]) {
                return Err(NetError::Domain(format!(
                    "density {} outside [0, {}] at cell {}",
                    x[i],
                    self.spec.a()[i],
                    i + 1
                )));
            }
            if !(v[i] >= 0.0) || !v[i].is_finite() {
                return Err(NetError::Domain(format!(
                    "inflow {} at cell {} must be finite and nonnegative",
                    v[i],
                    i + 1
                )));
            }
        }
        self.diagrams.domain.check(d)
    }

    /// Demands `f_i(d, x_i)` and supplies `g_i(d, x)` (unchecked).
    pub fn demand_supply(&self, x: &[f64], d: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let mut f = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for (i, &xi) in x.iter().enumerate().take(n) {
            let c = &self.diagrams.cells[i];
            let fi = c.demand(d, xi);
            let gi = c.supply(d, xi, self.spec.a()[i]);
            if !fi.is_finite() {
                return Err(NetError::Numerical {
                    cell: i,
                    what: format!("demand {fi}"),
                });
            }
            if !gi.is_finite() {
                return Err(NetError::Numerical {
                    cell: i,
                    what: format!("supply {gi}"),
                });
            }
            f.push(fi);
            g.push(gi);
        }
        Ok((f, g))
    }

    /// Supply share granted to each edge `(j, i)`, indexed `alloc[i][k]` for
    /// the `k`-th feeder of `i`, given the supply left after external inflows.
    fn allocate(&self, remaining: &[f64], demand: &[f64]) -> Vec<Vec<f64>> {
        (0..self.n())
            .map(|i| {
                let mut rem = remaining[i];
                self.feeders[i]
                    .iter()
                    .map(|&j| {
                        let share = rem.max(0.0);
                        rem -= self.spec.p()[(j, i)] * demand[j];
                        share
                    })
                    .collect()
            })
            .collect()
    }

    /// Throttles from edge allocations; `scale(j)` is the quantity the
    /// allocation is divided by (demand for the dynamics, capacity for the
    /// lower bound).
    fn throttles(
        &self,
        x: &[f64],
        demand: &[f64],
        alloc: &[Vec<f64>],
        scale: impl Fn(usize) -> f64,
    ) -> Vec<f64> {
        (0..self.n())
            .map(|j| {
                if x[j] == 0.0 || demand[j] < TINY_DEMAND {
                    return 1.0;
                }
                let mut s: f64 = 1.0;
                for &i in &self.successors[j] {
                    let k = self.feeders[i]
                        .iter()
                        .position(|&f| f == j)
                        .expect("successor lists feeder");
                    let need = self.spec.p()[(j, i)] * scale(j);
                    s = s.min(alloc[i][k] / need);
                }
                s.clamp(0.0, 1.0)
            })
            .collect()
    }

    /// One step with the default priority junction.
    pub fn step(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<(Vec<f64>, FlowBreakdown)> {
        self.step_with(&PriorityJunction, x, v, d)
    }

    /// One step with a caller-supplied junction model.
    pub fn step_with<J: JunctionModel + ?Sized>(
        &self,
        junction: &J,
        x: &[f64],
        v: &[f64],
        d: &[f64],
    ) -> Result<(Vec<f64>, FlowBreakdown)> {
        self.check_inputs(x, v, d)?;
        let n = self.n();
        let (f, g) = self.demand_supply(x, d)?;
        let Junction { s, accepted } = junction.resolve(self, x, v, &f, &g);
        let outflow: Vec<f64> = (0..n).map(|i| s[i] * f[i]).collect();
        let mut inflow = accepted.clone();
        for (j, &oj) in outflow.iter().enumerate() {
            for &i in &self.successors[j] {
                inflow[i] += self.spec.p()[(j, i)] * oj;
            }
        }
        let exit: Vec<f64> = (0..n).map(|i| self.spec.qexit()[i] * outflow[i]).collect();
        let mut xnext = Vec::with_capacity(n);
        for i in 0..n {
            let raw = x[i] + inflow[i] - outflow[i];
            if !raw.is_finite() {
                return Err(NetError::Numerical {
                    cell: i,
                    what: format!("next density {raw}"),
                });
            }
            xnext.push(raw.clamp(0.0, self.spec.a()[i]));
        }
        let w = (0..n)
            .map(|i| if v[i] > 0.0 { accepted[i] / v[i] } else { 1.0 })
            .collect();
        Ok((
            xnext,
            FlowBreakdown {
                outflow,
                inflow,
                exit,
                s,
                w,
                attempted_demand: f,
                accepted,
                supply: g,
            },
        ))
    }

    /// Throttles `s_i` of the default junction.
    pub fn compute_s(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(x, v, d)?;
        let (f, g) = self.demand_supply(x, d)?;
        Ok(PriorityJunction.resolve(self, x, v, &f, &g).s)
    }

    /// Whether every cell can absorb its attempted inflow:
    /// `v_i + sum_j p_ji f_j <= g_i` for all `i`.
    pub fn is_uncongested(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<bool> {
        self.check_inputs(x, v, d)?;
        let (f, g) = self.demand_supply(x, d)?;
        Ok((0..self.n()).all(|i| {
            let attempted: f64 = v[i]
                + self.feeders[i]
                    .iter()
                    .map(|&j| self.spec.p()[(j, i)] * f[j])
                    .sum::<f64>();
            attempted <= g[i]
        }))
    }

    /// Continuous lower bound `s~ <= s` on the throttles:
    /// the same priority allocation with the full requested inflow removed
    /// from each supply and each share divided by `p_ji a_j`.
    /// Cells without successors get 1.
    pub fn lower_throttle(&self, x: &[f64], v: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let (f, g) = self.demand_supply(x, d)?;
        let remaining: Vec<f64> = (0..self.n()).map(|i| g[i] - v[i]).collect();
        let alloc = self.allocate(&remaining, &f);
        let a = self.spec.a();
        Ok((0..self.n())
            .map(|j| {
                let mut s: f64 = 1.0;
                for &i in &self.successors[j] {
                    let k = self.feeders[i]
                        .iter()
                        .position(|&q| q == j)
                        .expect("feeder");
                    s = s.min(alloc[i][k] / (self.spec.p()[(j, i)] * a[j]));
                }
                s.clamp(0.0, 1.0)
            })
            .collect())
    }
}

/// One step of the default dynamics for a spec and diagrams.
pub fn step(
    spec: &NetworkSpec,
    diagrams: &Diagrams,
    x: &[f64],
    v: &[f64],
    d: &[f64],
) -> Result<(Vec<f64>, FlowBreakdown)> {
    Model::new(spec.clone(), diagrams.clone())?.step(x, v, d)
}

/// Throttles of the default dynamics.
pub fn compute_s(
    spec: &NetworkSpec,
    diagrams: &Diagrams,
    x: &[f64],
    v: &[f64],
    d: &[f64],
) -> Result<Vec<f64>> {
    Model::new(spec.clone(), diagrams.clone())?.compute_s(x, v, d)
}

/// Whether no cell is congested at `(x, v, d)`.
pub fn is_uncongested(
    spec: &NetworkSpec,
    diagrams: &Diagrams,
    x: &[f64],
    v: &[f64],
    d: &[f64],
) -> Result<bool> {
    Model::new(spec.clone(), diagrams.clone())?.is_uncongested(x, v, d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, VSTAR, XSTAR};

    fn model() -> Model {
        Model::new(presets::freeway_network(), presets::freeway_diagrams()).unwrap()
    }

    const D: [f64; 4] = [0.3, 0.2, 0.5, 0.22];

    #[test]
    fn equilibrium_is_fixed_point() {
        let (xn, fl) = model().step(&XSTAR, &VSTAR, &D).unwrap();
        for i in 0..8 {
            assert!((xn[i] - XSTAR[i]).abs() < 1e-9);
            assert_eq!(fl.s[i], 1.0);
            assert_eq!(fl.w[i], 1.0);
        }
    }

    #[test]
    fn empty_network_stays_empty() {
        let (xn, fl) = model().step(&[0.0; 8], &[0.0; 8], &D).unwrap();
        assert_eq!(xn, vec![0.0; 8]);
        assert!(fl.s.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn jammed_merge_blocks_both_feeders() {
        let mut x = XSTAR;
        x[6] = 170.0;
        let (_, fl) = model().step(&x, &VSTAR, &D).unwrap();
        assert_eq!(fl.supply[6], 0.0);
        assert_eq!(fl.s[5], 0.0);
        assert_eq!(fl.s[3], 0.0);
        assert_eq!(fl.inflow[6], 0.0);
    }

    #[test]
    fn merge_priority_hand_values() {
        let mut x = XSTAR;
        x[6] = 160.0;
        let s = model().compute_s(&x, &VSTAR, &D).unwrap();
        // g_7 = 0.22 * 10 = 2.2, cell 6 sends 12.5, so s_6 = 0.176 and cell 4 gets nothing
        assert!((s[5] - 2.2 / 12.5).abs() < 1e-12);
        assert_eq!(s[3], 0.0);
        assert_eq!(s[7], 1.0);
    }

    #[test]
    fn empty_cell_is_unthrottled() {
        let mut x = [170.0; 8];
        x[3] = 0.0;
        let s = model().compute_s(&x, &VSTAR, &D).unwrap();
        assert_eq!(s[3], 1.0);
    }

    #[test]
    fn congestion_predicate() {
        let m = model();
        assert!(m.is_uncongested(&XSTAR, &VSTAR, &D).unwrap());
        assert!(!m.is_uncongested(&[170.0; 8], &VSTAR, &D).unwrap());
        assert!(m.is_uncongested(&[0.0; 8], &[0.0; 8], &D).unwrap());
    }

    #[test]
    fn uncongested_implies_full_throttles() {
        let m = model();
        let x = [40.0, 50.0, 30.0, 55.0, 20.0, 27.5, 55.0, 10.0];
        let v = [25.0, 0.3, 0.3, 0.3, 12.0, 0.3, 0.3, 0.3];
        assert!(m.is_uncongested(&x, &v, &D).unwrap());
        let (_, fl) = m.step(&x, &v, &D).unwrap();
        assert!(fl.s.iter().all(|&s| s == 1.0));
        assert!(fl.w.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn rejects_out_of_box_inputs() {
        let m = model();
        assert!(matches!(
            m.step(&[171.0; 8], &VSTAR, &D),
            Err(NetError::Domain(_))
        ));
        assert!(matches!(
            m.step(&XSTAR, &[-1.0; 8], &D),
            Err(NetError::Domain(_))
        ));
        assert!(matches!(
            m.step(&XSTAR, &VSTAR, &[0.0, 0.0, 0.0, 0.5]),
            Err(NetError::Domain(_))
        ));
        assert!(matches!(
            m.step(&XSTAR[..4], &VSTAR, &D),
            Err(NetError::Dimension(_))
        ));
    }

    #[test]
    fn lower_throttle_bounds_throttle() {
        let m = model();
        let x = [170.0, 100.0, 20.0, 150.0, 160.0, 30.0, 165.0, 0.0];
        let v = [10.0, 0.1, 0.0, 0.2, 5.0, 0.0, 0.3, 0.0];
        let s = m.compute_s(&x, &v, &D).unwrap();
        let st = m.lower_throttle(&x, &v, &D).unwrap();
        for i in 0..8 {
            assert!(st[i] <= s[i] + 1e-15, "cell {i}: {} > {}", st[i], s[i]);
        }
        assert_eq!(st[7], 1.0);
    }

    #[test]
    fn free_function_wrappers_agree() {
        let spec = presets::freeway_network();
        let dg = presets::freeway_diagrams();
        let x = [60.0, 70.0, 80.0, 90.0, 30.0, 40.0, 100.0, 20.0];
        let (a, _) = step(&spec, &dg, &x, &VSTAR, &D).unwrap();
        let (b, _) = model().step(&x, &VSTAR, &D).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            compute_s(&spec, &dg, &x, &VSTAR, &D).unwrap(),
            model().compute_s(&x, &VSTAR, &D).unwrap()
        );
        assert!(!is_uncongested(&spec, &dg, &x, &VSTAR, &D).unwrap());
    }
}
