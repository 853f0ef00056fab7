use std::sync::OnceLock;

use approx::assert_relative_eq;
use proptest::prelude::*;

use netstab::analysis::{build_core, in_region, GammaOptions};
use netstab::controller::{synthesize, ControllerConfig};
use netstab::dynamics::Model;
use netstab::equilibrium::solve_uep;
use netstab::presets::{self, CAPACITY, CLOSED_LOOP_X0, VSTAR, XSTAR};
use netstab::reproduce::{
    fit_open_loop_disturbance, open_loop_scenario, reproduce, OPEN_LOOP_BURN_IN,
};
use netstab::sim::{
    estimate_decay, export_csv, gridlock_demo, gridlock_run, run_scenario, ControlSpec, DecayFit,
    DisturbanceSpec, ScenarioConfig,
};
use netstab::NetError;

fn model() -> Model {
    Model::new(presets::freeway_network(), presets::freeway_diagrams()).unwrap()
}

fn closed(x0: &[f64], seed: u64, horizon: usize) -> ScenarioConfig {
    ScenarioConfig {
        x0: x0.to_vec(),
        horizon,
        disturbance: DisturbanceSpec::Uniform { seed, stream: 0 },
        control: ControlSpec::ClosedLoop(ControllerConfig::freeway_experiment()),
        step_seconds: 15.0,
        stationary_tol: None,
    }
}

#[test]
fn csv_output_is_byte_identical_on_replay() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let sc = closed(&CLOSED_LOOP_X0[1], 17, 120);
    let paths: Vec<_> = (0..2)
        .map(|k| dir.path().join(format!("run{k}.csv")))
        .collect();
    for p in &paths {
        export_csv(&run_scenario(&m, &sc, &XSTAR).unwrap(), p).unwrap();
    }
    let a = std::fs::read(&paths[0]).unwrap();
    assert_eq!(a, std::fs::read(&paths[1]).unwrap());
    let other = dir.path().join("other.csv");
    export_csv(
        &run_scenario(&m, &closed(&CLOSED_LOOP_X0[1], 18, 120), &XSTAR).unwrap(),
        &other,
    )
    .unwrap();
    assert_ne!(a, std::fs::read(&other).unwrap());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 122);
}

#[test]
fn csv_to_unwritable_path_reports_path() {
    let m = model();
    let rec = run_scenario(&m, &closed(&XSTAR, 1, 1), &XSTAR).unwrap();
    let err = export_csv(&rec, "/nonexistent-dir/out.csv").unwrap_err();
    assert!(err.to_string().contains("/nonexistent-dir/out.csv"));
}

#[test]
fn geometric_decay_recovered() {
    let dev: Vec<f64> = (0..40).map(|t| 3.0 * 2f64.powi(-t)).collect();
    match estimate_decay(&dev, 5) {
        DecayFit::Fit {
            sigma,
            m_hat,
            residual,
            ..
        } => {
            assert_relative_eq!(sigma, std::f64::consts::LN_2, epsilon = 1e-6);
            assert_relative_eq!(m_hat, 3.0, max_relative = 1e-6);
            assert!(residual < 1e-9);
        }
        DecayFit::Converged => panic!("expected a fit"),
    }
    assert_eq!(estimate_decay(&[1e-13; 10], 0), DecayFit::Converged);
}

#[test]
fn open_loop_plateau_shows_no_decay_toward_equilibrium() {
    let m = model();
    let (d, _) = fit_open_loop_disturbance(&m).unwrap();
    let rec = run_scenario(&m, &open_loop_scenario(d), &XSTAR).unwrap();
    match estimate_decay(&rec.deviation, OPEN_LOOP_BURN_IN) {
        DecayFit::Fit { sigma, m_hat, .. } => {
            // the remaining drift is the sub-vehicle approach to the plateau
            assert!(sigma.abs() < 1e-5, "sigma {sigma}");
            assert_relative_eq!(m_hat, 125.5, epsilon = 2.0);
        }
        DecayFit::Converged => panic!("plateau must not count as converged"),
    }
}

#[test]
fn closed_loop_from_incident_reaches_equilibrium() {
    let rec = run_scenario(&model(), &closed(&CLOSED_LOOP_X0[3], 5, 500), &XSTAR).unwrap();
    assert!(rec.deviation.iter().any(|&d| d < 1.0));
    assert!(estimate_decay(&rec.deviation, 0).sigma().unwrap() > 0.0);
    let c = ControllerConfig::freeway_experiment();
    for (t, v) in rec.inflows.iter().enumerate() {
        assert_eq!(v, &c.control_law(&rec.states[t]));
    }
}

#[test]
fn gridlock_cases() {
    let ring = Model::new(presets::ring_network(), presets::ring_diagrams()).unwrap();
    let (rep, rec) = gridlock_demo(&ring, 1000, 3).unwrap();
    assert!(rep.gridlocked());
    assert!(rec.states.iter().all(|x| x.iter().all(|&z| z == CAPACITY)));

    let (free, _) = gridlock_run(&ring, &[0.0; 3], 200, 3).unwrap();
    assert!(!free.gridlocked());
    assert!(free.max_cycle_change > 0.0);

    let back = Model::new(
        presets::freeway_with_back_edge(),
        presets::freeway_diagrams(),
    )
    .unwrap();
    let (rep, _) = gridlock_demo(&back, 1000, 4).unwrap();
    assert_eq!(rep.cycle, vec![2, 3, 6]);
    assert!(rep.gridlocked());

    assert!(matches!(
        gridlock_demo(&model(), 10, 1),
        Err(NetError::Misuse(_))
    ));
}

#[test]
fn reproduction_suite_writes_files_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let summary = reproduce(9, Some(dir.path())).unwrap();
    assert!(summary.passed, "{summary:#?}");
    assert_eq!(summary.closed_loop.len(), 10);
    for f in &summary.files {
        assert!(std::path::Path::new(f).exists());
    }
    assert!(dir.path().join("summary.json").exists());
    assert!((0.22..=0.3).contains(&summary.fitted_d[3]));
}

#[test]
fn shipped_scenarios_load_and_run() {
    let data = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data");
    let m = Model::new(
        netstab::network::NetworkSpec::from_path(data.join("freeway_network.json")).unwrap(),
        netstab::diagram::Diagrams::from_path(data.join("freeway_diagrams.json")).unwrap(),
    )
    .unwrap();
    let ctrl = ControllerConfig::from_path(data.join("experiment_controller.json")).unwrap();
    assert_eq!(ctrl, ControllerConfig::freeway_experiment());
    for name in ["open_loop_jam.json", "closed_loop_random.json"] {
        let sc = ScenarioConfig::from_path(data.join(name)).unwrap();
        let rec = run_scenario(&m, &sc, &XSTAR).unwrap();
        assert!(rec.mass_residual_max < 1e-9);
    }
}

fn synthesized() -> (ControllerConfig, Vec<f64>) {
    static CACHE: OnceLock<(ControllerConfig, Vec<f64>)> = OnceLock::new();
    CACHE
        .get_or_init(|| {
            let m = model();
            let eq = solve_uep(&m, &VSTAR).unwrap();
            let core = build_core(&m, &eq, GammaOptions::default()).unwrap();
            (synthesize(&eq, &core, 0.5).unwrap(), core.beta)
        })
        .clone()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn invariant_box_is_positively_invariant(u in proptest::collection::vec(0.0f64..=1.0, 8), seed in any::<u64>()) {
        let (ctrl, beta) = synthesized();
        let x0: Vec<f64> = u.iter().zip(&beta).map(|(a, b)| a * b).collect();
        let sc = ScenarioConfig {
            x0,
            horizon: 200,
            disturbance: DisturbanceSpec::Uniform { seed, stream: 0 },
            control: ControlSpec::ClosedLoop(ctrl.clone()),
            step_seconds: 15.0,
            stationary_tol: None,
        };
        let rec = run_scenario(&model(), &sc, &XSTAR).unwrap();
        prop_assert!(rec.states.iter().all(|x| in_region(x, &beta)));
        for v in &rec.inflows {
            for ((vi, bi), si) in v.iter().zip(&ctrl.b).zip(&ctrl.vstar) {
                prop_assert!(vi >= bi && vi <= si);
            }
        }
    }

    #[test]
    fn recorded_states_stay_in_state_space(x0 in proptest::collection::vec(0.0..=CAPACITY, 8), seed in any::<u64>()) {
        let rec = run_scenario(&model(), &closed(&x0, seed, 100), &XSTAR).unwrap();
        prop_assert_eq!(rec.states.len(), 101);
        prop_assert!(rec.states.iter().flatten().all(|&z| (0.0..=CAPACITY).contains(&z)));
        prop_assert!(rec.mass_residual_max < 1e-9);
    }
}
