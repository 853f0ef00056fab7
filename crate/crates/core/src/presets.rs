//! The eight-cell freeway-to-freeway instance: two mainlines (cells 1-4 and
//! 5-6) merging into cell 7, with an off-ramp at cell 4.
//!
//! Indices in code are 0-based, so cell 1 is index 0.

use nalgebra::DMatrix;

use crate::diagram::{
    CellDiagram, DemandFamily, Diagrams, SectorConstants, SupplyFunction, UncertaintyBox,
    FREEWAY_EPS, FREEWAY_SWITCH,
};
use crate::network::NetworkSpec;

/// Cells (0-based) that use the on-ramp demand family.
pub const ONRAMP_CELLS: [usize; 2] = [4, 5];

/// Storage capacity of every cell (veh).
pub const CAPACITY: f64 = 170.0;

/// Equilibrium external inflows (veh per step).
pub const VSTAR: [f64; 8] = [25.0, 0.0, 0.0, 0.0, 12.5, 0.0, 0.0, 0.0];

/// Equilibrium densities (veh).
pub const XSTAR: [f64; 8] = [55.0, 55.0, 55.0, 55.0, 27.5, 27.5, 55.0, 55.0];

/// Equilibrium flows (veh per step).
pub const FSTAR: [f64; 8] = [25.0, 25.0, 25.0, 25.0, 12.5, 12.5, 25.0, 25.0];

/// Ramp-metering gain used in the reported experiments (uniform entries).
pub const EXPERIMENT_GAIN: f64 = 0.016;

/// Controller parameter used in the reported experiments.
pub const EXPERIMENT_TAU: f64 = 0.5;

/// Inflow floors used in the reported experiments.
pub const EXPERIMENT_B: [f64; 8] = [0.5, 0.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0];

/// Initial conditions of the four closed-loop experiments.
pub const CLOSED_LOOP_X0: [[f64; 8]; 4] = [
    [170.0, 170.0, 170.0, 170.0, 170.0, 170.0, 170.0, 170.0],
    [150.0, 140.0, 60.0, 120.0, 120.0, 100.0, 160.0, 130.0],
    [100.0, 120.0, 10.0, 20.0, 110.0, 80.0, 5.0, 90.0],
    [50.0, 50.0, 50.0, 50.0, 27.0, 27.0, 80.0, 60.0],
];

/// Congested equilibrium reached by the uncontrolled network from jam.
pub const CONGESTED_POINT: [f64; 8] = [111.8, 111.8, 111.8, 111.8, 27.5, 27.5, 92.82, 92.82];

/// Turning matrix: chains 1-2-3-4 and 5-6-7-8, with half of cell 4 going to 7.
pub fn freeway_turning() -> DMatrix<f64> {
    let mut p = DMatrix::zeros(8, 8);
    for i in [0, 1, 2, 4, 5, 6] {
        p[(i, i + 1)] = 1.0;
    }
    p[(3, 6)] = 0.5;
    p
}

/// Network structure of the freeway-to-freeway instance.
pub fn freeway_network() -> NetworkSpec {
    let mut qexit = vec![0.0; 8];
    qexit[3] = 0.5;
    qexit[7] = 1.0;
    let mu = (0..8)
        .map(|i| {
            if ONRAMP_CELLS.contains(&i) {
                27.5 + FREEWAY_EPS
            } else {
                55.0 + FREEWAY_EPS
            }
        })
        .collect();
    let vmax = (0..8)
        .map(|i| if i == 0 || i == 4 { 25.0 } else { 0.3 })
        .collect();
    NetworkSpec::new(vec![CAPACITY; 8], freeway_turning(), qexit, mu, vmax)
        .expect("preset dimensions are consistent")
}

/// Demand and supply functions of the freeway-to-freeway instance.
pub fn freeway_diagrams() -> Diagrams {
    let cells = (0..8)
        .map(|i| {
            let ramp = ONRAMP_CELLS.contains(&i);
            CellDiagram {
                family: if ramp {
                    DemandFamily::FreewayOnRamp
                } else {
                    DemandFamily::FreewayMain
                },
                constants: SectorConstants {
                    delta: FREEWAY_SWITCH,
                    delta_tilde: FREEWAY_SWITCH,
                    l: if ramp { 0.009 } else { 0.2 },
                    g: if ramp { 0.9 } else { 0.71 },
                    fmin: 10.0,
                },
                supply: SupplyFunction::freeway(),
            }
        })
        .collect();
    Diagrams::new(UncertaintyBox::freeway(), cells).expect("preset diagrams are consistent")
}

/// Three main-line cells in a ring (`1 -> 2 -> 3 -> 1`) without exits.
pub fn ring_network() -> NetworkSpec {
    let mut p = DMatrix::zeros(3, 3);
    p[(0, 1)] = 1.0;
    p[(1, 2)] = 1.0;
    p[(2, 0)] = 1.0;
    NetworkSpec::new(
        vec![CAPACITY; 3],
        p,
        vec![0.0; 3],
        vec![55.0 + FREEWAY_EPS; 3],
        vec![25.0, 0.3, 0.3],
    )
    .expect("preset dimensions are consistent")
}

/// Main-line diagrams for [`ring_network`].
pub fn ring_diagrams() -> Diagrams {
    let main = freeway_diagrams().cells[0].clone();
    Diagrams::new(UncertaintyBox::freeway(), vec![main; 3]).expect("preset diagrams are consistent")
}

/// The freeway instance with half of cell 7 routed back to cell 3, closing
/// the cycle `3 -> 4 -> 7 -> 3`.
pub fn freeway_with_back_edge() -> NetworkSpec {
    let base = freeway_network();
    let mut p = base.p().clone();
    p[(6, 7)] = 0.5;
    p[(6, 2)] = 0.5;
    base.with_p(p).expect("preset dimensions are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let spec = freeway_network();
        assert_eq!(spec.n(), 8);
        assert_eq!(spec.predecessors(6), vec![3, 5]);
        assert_eq!(spec.successors(3), vec![6]);
        let dg = freeway_diagrams();
        dg.check_matches(&spec).unwrap();
        assert!(freeway_with_back_edge().validate().is_ok());
        assert!(ring_network().validate().is_ok());
        ring_diagrams().check_matches(&ring_network()).unwrap();
    }
}
