//! End-to-end rerun of the freeway experiments: the uncontrolled run from
//! jam, and the closed loop from several initial conditions under constant
//! and random disturbances.

use std::path::Path;

use serde::Serialize;

use crate::controller::ControllerConfig;
use crate::dynamics::Model;
use crate::equilibrium::fit_constant_disturbance;
use crate::error::{NetError, Result};
use crate::presets::{self, CAPACITY, CLOSED_LOOP_X0, CONGESTED_POINT, FSTAR, VSTAR, XSTAR};
use crate::sim::{
    estimate_decay, export_csv, run_scenario, ControlSpec, DecayFit, DisturbanceSpec,
    ScenarioConfig,
};

/// Horizon of every run (steps of 15 s).
pub const HORIZON: usize = 500;
/// Stationarity tolerance ending the uncontrolled run.
pub const STATIONARY_TOL: f64 = 1e-9;
/// Steps skipped before fitting the decay of the uncontrolled run.
pub const OPEN_LOOP_BURN_IN: usize = 100;
/// Deviation that counts as having reached the equilibrium (veh).
pub const REACHED_DEVIATION: f64 = 1.0;

/// Reference values of the uncontrolled run.
pub const OPEN_LOOP_DEVIATION: f64 = 125.5;
pub const OPEN_LOOP_DEVIATION_TOL: f64 = 2.0;
pub const DEFICIT_CELL4: f64 = 7.4;
pub const DEFICIT_CELL8: f64 = 4.9;
pub const DEFICIT_TOL: f64 = 0.3;
/// Largest per-step mass-balance residual tolerated.
pub const MASS_TOL: f64 = 1e-9;

/// Outcome of the uncontrolled run from jam.
#[derive(Debug, Clone, Serialize)]
pub struct OpenLoopSummary {
    pub steps: usize,
    pub stopped_early: bool,
    pub terminal_state: Vec<f64>,
    pub terminal_deviation: f64,
    /// `25 - f_4` at the last step.
    pub deficit_cell4: f64,
    /// `25 - f_8` at the last step.
    pub deficit_cell8: f64,
    pub distance_to_congested_point: f64,
    pub decay: DecayFit,
    pub mass_residual_max: f64,
    pub passed: bool,
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopSummary {
    pub name: String,
    pub x0: Vec<f64>,
    pub random_disturbance: bool,
    pub steps: usize,
    /// First step with deviation below [`REACHED_DEVIATION`].
    pub reached_at: Option<usize>,
    pub terminal_deviation: f64,
    pub decay: DecayFit,
    pub mass_residual_max: f64,
    /// `b <= v(t) <= v*` at every step.
    pub inflow_bounds_ok: bool,
    pub passed: bool,
}

/// Everything `reproduce` computes.
#[derive(Debug, Clone, Serialize)]
pub struct ReproductionSummary {
    pub seed: u64,
    /// Constant disturbance of the uncontrolled run and of the constant-d
    /// closed-loop runs, with its last component fitted.
    pub fitted_d: Vec<f64>,
    pub fit_residual: f64,
    pub open_loop: OpenLoopSummary,
    pub closed_loop: Vec<ClosedLoopSummary>,
    pub files: Vec<String>,
    pub passed: bool,
}

/// Fits the last disturbance component so that the congested point is as
/// close as possible to a fixed point under `v*`, with `d_1 = d_3 = 1` and
/// `d_2 = 0`.
pub fn fit_open_loop_disturbance(model: &Model) -> Result<(Vec<f64>, f64)> {
    let base = [1.0, 0.0, 1.0, 0.26];
    let fit = fit_constant_disturbance(model, &CONGESTED_POINT, &VSTAR, &base, 3, 81)?;
    Ok((fit.d, fit.residual))
}

/// Runs the uncontrolled scenario from jam under constant `d`.
pub fn open_loop_scenario(d: Vec<f64>) -> ScenarioConfig {
    ScenarioConfig {
        x0: vec![CAPACITY; 8],
        horizon: HORIZON,
        disturbance: DisturbanceSpec::Constant(d),
        control: ControlSpec::OpenLoop(VSTAR.to_vec()),
        step_seconds: 15.0,
        stationary_tol: Some(STATIONARY_TOL),
    }
}

/// Closed-loop scenario of the experiment controller.
pub fn closed_loop_scenario(x0: &[f64], disturbance: DisturbanceSpec) -> ScenarioConfig {
    ScenarioConfig {
        x0: x0.to_vec(),
        horizon: HORIZON,
        disturbance,
        control: ControlSpec::ClosedLoop(ControllerConfig::freeway_experiment()),
        step_seconds: 15.0,
        stationary_tol: None,
    }
}

/// Runs the full suite, writing one CSV per run and `summary.json` into
/// `out` when given.
pub fn reproduce(seed: u64, out: Option<&Path>) -> Result<ReproductionSummary> {
    let model = Model::new(presets::freeway_network(), presets::freeway_diagrams())?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| NetError::io(dir, e))?;
    }
    let mut files = Vec::new();
    let mut save = |name: &str, rec: &crate::sim::TrajectoryRecord| -> Result<()> {
        if let Some(dir) = out {
            let path = dir.join(format!("{name}.csv"));
            export_csv(rec, &path)?;
            files.push(path.display().to_string());
        }
        Ok(())
    };

    let (fitted_d, fit_residual) = fit_open_loop_disturbance(&model)?;
    let rec = run_scenario(&model, &open_loop_scenario(fitted_d.clone()), &XSTAR)?;
    save("open_loop_jam", &rec)?;
    let last = rec.flows.last().expect("horizon is positive");
    let deficit_cell4 = FSTAR[3] - last.attempted_demand[3];
    let deficit_cell8 = FSTAR[7] - last.attempted_demand[7];
    let terminal_deviation = rec.terminal_deviation();
    let open_loop = OpenLoopSummary {
        steps: rec.steps(),
        stopped_early: rec.stopped_early,
        terminal_state: rec.terminal().to_vec(),
        terminal_deviation,
        deficit_cell4,
        deficit_cell8,
        distance_to_congested_point: crate::analysis::region::dist(
            rec.terminal(),
            &CONGESTED_POINT,
        ),
        decay: estimate_decay(&rec.deviation, OPEN_LOOP_BURN_IN),
        mass_residual_max: rec.mass_residual_max,
        passed: (terminal_deviation - OPEN_LOOP_DEVIATION).abs() <= OPEN_LOOP_DEVIATION_TOL
            && (deficit_cell4 - DEFICIT_CELL4).abs() <= DEFICIT_TOL
            && (deficit_cell8 - DEFICIT_CELL8).abs() <= DEFICIT_TOL
            && rec.mass_residual_max < MASS_TOL,
    };

    let low = [20.0, 25.0, 20.0, 25.0, 20.0, 25.0, 20.0, 25.0];
    let jam = CLOSED_LOOP_X0[0];
    let incident = CLOSED_LOOP_X0[3];
    let mut runs: Vec<(String, Vec<f64>, DisturbanceSpec)> = Vec::new();
    for (tag, x0) in [("a", low), ("b", incident), ("c", jam)] {
        runs.push((
            format!("constant_d_{tag}"),
            x0.to_vec(),
            DisturbanceSpec::Constant(fitted_d.clone()),
        ));
    }
    let mut stream = 0;
    for (tag, x0) in [("a", low), ("b", incident), ("c", jam)] {
        runs.push((
            format!("random_d_{tag}"),
            x0.to_vec(),
            DisturbanceSpec::Uniform { seed, stream },
        ));
        stream += 1;
    }
    for (tag, x0) in ["a", "b", "c", "d"].into_iter().zip(CLOSED_LOOP_X0) {
        runs.push((
            format!("deviation_{tag}"),
            x0.to_vec(),
            DisturbanceSpec::Uniform { seed, stream },
        ));
        stream += 1;
    }

    let ctrl = ControllerConfig::freeway_experiment();
    let mut closed_loop = Vec::new();
    for (name, x0, dist) in runs {
        let random_disturbance = matches!(dist, DisturbanceSpec::Uniform { .. });
        let rec = run_scenario(&model, &closed_loop_scenario(&x0, dist), &XSTAR)?;
        save(&name, &rec)?;
        let reached_at = rec.deviation.iter().position(|&d| d < REACHED_DEVIATION);
        let inflow_bounds_ok = rec
            .inflows
            .iter()
            .all(|v| (0..8).all(|i| v[i] >= ctrl.b[i] && v[i] <= ctrl.vstar[i]));
        let decay = estimate_decay(&rec.deviation, 0);
        let sigma_ok = decay.sigma().is_none_or(|s| s > 0.0);
        let passed = reached_at.is_some()
            && sigma_ok
            && inflow_bounds_ok
            && rec.mass_residual_max < MASS_TOL;
        closed_loop.push(ClosedLoopSummary {
            name,
            x0,
            random_disturbance,
            steps: rec.steps(),
            reached_at,
            terminal_deviation: rec.terminal_deviation(),
            decay,
            mass_residual_max: rec.mass_residual_max,
            inflow_bounds_ok,
            passed,
        });
    }

    let passed = open_loop.passed && closed_loop.iter().all(|r| r.passed);
    let mut summary = ReproductionSummary {
        seed,
        fitted_d,
        fit_residual,
        open_loop,
        closed_loop,
        files,
        passed,
    };
    if let Some(dir) = out {
        let path = dir.join("summary.json");
        summary.files.push(path.display().to_string());
        let text = serde_json::to_string_pretty(&summary)?;
        std::fs::write(&path, text).map_err(|e| NetError::io(&path, e))?;
    }
    Ok(summary)
}
