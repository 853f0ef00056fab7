use proptest::prelude::*;
use rand::Rng;

use netstab::diagram::{Diagrams, FREEWAY_SWITCH};
use netstab::dynamics::Model;
use netstab::presets::{self, CAPACITY};
use netstab::sampling::{stream_rng, uniform_in_box};

fn model() -> Model {
    Model::new(presets::freeway_network(), presets::freeway_diagrams()).unwrap()
}

fn state() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(
        prop_oneof![1 => Just(0.0), 1 => Just(CAPACITY), 6 => 0.0..=CAPACITY],
        8,
    )
}

fn inflow() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(prop_oneof![1 => Just(0.0), 4 => 0.0f64..60.0], 8)
}

fn disturbance() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.22f64..=0.3)
        .prop_map(|(a, b, c, d)| vec![a, b, c, d])
}

#[test]
fn state_confinement_and_conservation_on_ten_thousand_samples() {
    let m = model();
    let dom = &m.diagrams().domain;
    let p = m.spec().p();
    let mut rng = stream_rng(11, 0);
    for _ in 0..10_000 {
        let x = uniform_in_box(&mut rng, &[0.0; 8], &[CAPACITY; 8]);
        let v: Vec<f64> = (0..8).map(|_| 60.0 * rng.random::<f64>()).collect();
        let d = uniform_in_box(&mut rng, &dom.lo, &dom.hi);
        let (xn, fl) = m.step(&x, &v, &d).unwrap();
        assert!(
            xn.iter().all(|&z| (-1e-12..=CAPACITY + 1e-12).contains(&z)),
            "{xn:?}"
        );
        assert!(fl.mass_balance_residual(&x, &xn) < 1e-9);
        for j in 0..8 {
            let fed: f64 = (0..8).map(|i| p[(i, j)] * fl.outflow[i]).sum();
            assert!((fl.inflow[j] - fl.accepted[j] - fed).abs() < 1e-9);
            assert!(fl.inflow[j] <= fl.supply[j] + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn throttles_and_acceptance_in_unit_interval(x in state(), v in inflow(), d in disturbance()) {
        let (xn, fl) = model().step(&x, &v, &d).unwrap();
        prop_assert!(fl.s.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(fl.w.iter().all(|w| (0.0..=1.0).contains(w)));
        for i in 0..8 {
            prop_assert!(fl.accepted[i] <= v[i]);
            prop_assert!((0.0..=CAPACITY).contains(&xn[i]));
        }
    }

    #[test]
    fn raising_a_successor_never_raises_throttles(
        x in state(), v in inflow(), d in disturbance(), j in 1usize..8, bump in 0.0f64..100.0
    ) {
        let m = model();
        let s0 = m.compute_s(&x, &v, &d).unwrap();
        let mut y = x.clone();
        y[j] = (y[j] + bump).min(CAPACITY);
        let s1 = m.compute_s(&y, &v, &d).unwrap();
        for &i in m.feeders(j) {
            prop_assert!(s1[i] <= s0[i] + 1e-12, "feeder {i}: {} -> {}", s0[i], s1[i]);
        }
    }

    #[test]
    fn uncongested_states_pass_everything(x in state(), v in inflow(), d in disturbance()) {
        let m = model();
        if m.is_uncongested(&x, &v, &d).unwrap() {
            let (_, fl) = m.step(&x, &v, &d).unwrap();
            prop_assert!(fl.s.iter().all(|&s| s == 1.0));
            prop_assert_eq!(fl.accepted, v);
        }
    }

    #[test]
    fn supply_and_demand_bounds(z in 0.0..=CAPACITY, d in disturbance()) {
        let dg: Diagrams = presets::freeway_diagrams();
        for (i, cell) in dg.cells.iter().enumerate() {
            let g = dg.eval_supply(i, &d, z, CAPACITY).unwrap();
            prop_assert!(g <= CAPACITY - z + 1e-12);
            prop_assert!(g >= 0.0);
            if z > 0.0 {
                prop_assert!(cell.demand(&d, z) < z);
            }
        }
    }

    #[test]
    fn main_family_continuous_at_branch_switch(d in disturbance()) {
        let dg = presets::freeway_diagrams();
        let main = &dg.cells[0];
        let below = main.demand(&d, FREEWAY_SWITCH - 1e-9);
        let at = main.demand(&d, FREEWAY_SWITCH);
        prop_assert!((below - at).abs() < 1e-6, "{below} vs {at}");
        prop_assert!((main.demand(&d, 55.0) - 25.0).abs() < 1e-6);
    }
}

#[test]
fn jammed_downstream_blocks_feeders_regardless_of_disturbance() {
    let m = model();
    let mut x = [40.0; 8];
    x[6] = CAPACITY;
    let v = presets::VSTAR;
    for d in m.diagrams().domain.corners() {
        let (_, fl) = m.step(&x, &v, &d).unwrap();
        assert_eq!(fl.outflow[3], 0.0);
        assert_eq!(fl.outflow[5], 0.0);
        assert_eq!(fl.inflow[6], 0.0);
    }
}
