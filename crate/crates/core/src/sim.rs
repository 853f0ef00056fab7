//! Scenario execution, convergence metrics, the gridlock demonstration and
//! CSV export.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::region::{dist, lyapunov_eval};
use crate::controller::{ControllerConfig, ControllerFile};
use crate::dynamics::{FlowBreakdown, Model};
use crate::error::{NetError, Result};
use crate::network::find_cycle;
use crate::sampling::{stream_rng, uniform_in_box};

/// Deviations at or below this value count as converged in [`estimate_decay`].
pub const CONVERGED_DEVIATION: f64 = 1e-12;

/// Disturbance sequence of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceSpec {
    /// The same `d` at every step.
    Constant(Vec<f64>),
    /// Independent uniform samples over the disturbance box.
    Uniform {
        seed: u64,
        #[serde(default)]
        stream: u64,
    },
}

/// Inflow policy of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSpec {
    /// Fixed inflow at every step.
    OpenLoop(Vec<f64>),
    /// Inflow from the feedback law.
    ClosedLoop(ControllerConfig),
}

/// JSON layout of the control section of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlFile {
    OpenLoop { v: Vec<f64> },
    ClosedLoop { controller: ControllerFile },
}

/// A simulation run description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub disturbance: DisturbanceSpec,
    pub control: ControlSpec,
    /// Wall-clock length of a step in seconds (metadata only).
    pub step_seconds: f64,
    /// Stop once `max_i |x+_i - x_i|` falls below this value.
    pub stationary_tol: Option<f64>,
}

/// JSON layout of a scenario file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub x0: Vec<f64>,
    pub horizon: usize,
    pub disturbance: DisturbanceSpec,
    pub control: ControlFile,
    #[serde(default = "default_step_seconds")]
    pub step_seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stationary_tol: Option<f64>,
}

fn default_step_seconds() -> f64 {
    15.0
}

impl ScenarioConfig {
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        let control = match file.control {
            ControlFile::OpenLoop { v } => ControlSpec::OpenLoop(v),
            ControlFile::ClosedLoop { controller } => {
                ControlSpec::ClosedLoop(ControllerConfig::from_file(controller)?)
            }
        };
        Ok(ScenarioConfig {
            x0: file.x0,
            horizon: file.horizon,
            disturbance: file.disturbance,
            control,
            step_seconds: file.step_seconds,
            stationary_tol: file.stationary_tol,
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        ScenarioFile {
            x0: self.x0.clone(),
            horizon: self.horizon,
            disturbance: self.disturbance.clone(),
            control: match &self.control {
                ControlSpec::OpenLoop(v) => ControlFile::OpenLoop { v: v.clone() },
                ControlSpec::ClosedLoop(c) => ControlFile::ClosedLoop {
                    controller: c.to_file(),
                },
            },
            step_seconds: self.step_seconds,
            stationary_tol: self.stationary_tol,
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        ScenarioConfig::from_file(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NetError::io(path, e))?;
        ScenarioConfig::from_json_str(&text)
    }

    /// Checks the scenario against a model.
    pub fn validate(&self, model: &Model) -> Result<()> {
        let n = model.n();
        if self.horizon == 0 {
            return Err(NetError::Domain("horizon must be at least one step".into()));
        }
        if self.x0.len() != n {
            return Err(NetError::Dimension(format!(
                "x0 has {} entries for {n} cells",
                self.x0.len()
            )));
        }
        for i in 0..n {
            if !(0.0..=model.spec().a()[i]).contains(&self.x0[i]) {
                return Err(NetError::Domain(format!(
                    "x0 outside [0, a] at cell {}",
                    i + 1
                )));
            }
        }
        if let DisturbanceSpec::Constant(d) = &self.disturbance {
            model.diagrams().domain.check(d)?;
        }
        match &self.control {
            ControlSpec::OpenLoop(v) if v.len() != n => Err(NetError::Dimension(format!(
                "inflow has {} entries for {n} cells",
                v.len()
            ))),
            ControlSpec::ClosedLoop(c) if c.n() != n => Err(NetError::Dimension(format!(
                "controller has {} cells, network {n}",
                c.n()
            ))),
            _ => Ok(()),
        }
    }
}

/// One transition of a running simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub t: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub d: Vec<f64>,
    pub xnext: Vec<f64>,
    pub flows: FlowBreakdown,
}

/// Step-by-step simulation that does not retain history.
pub struct Simulation<'a> {
    model: &'a Model,
    scenario: &'a ScenarioConfig,
    rng: Option<rand_chacha::ChaCha8Rng>,
    x: Vec<f64>,
    t: usize,
    stopped: bool,
}

impl<'a> Simulation<'a> {
    pub fn new(model: &'a Model, scenario: &'a ScenarioConfig) -> Result<Self> {
        scenario.validate(model)?;
        let rng = match scenario.disturbance {
            DisturbanceSpec::Uniform { seed, stream } => Some(stream_rng(seed, stream)),
            DisturbanceSpec::Constant(_) => None,
        };
        Ok(Simulation {
            model,
            scenario,
            rng,
            x: scenario.x0.clone(),
            t: 0,
            stopped: false,
        })
    }

    /// Current state.
    pub fn state(&self) -> &[f64] {
        &self.x
    }

    /// Advances one step; `None` once the horizon is reached or the state
    /// became stationary.
    pub fn advance(&mut self) -> Option<Result<Transition>> {
        if self.stopped || self.t >= self.scenario.horizon {
            return None;
        }
        let d = match (&self.scenario.disturbance, self.rng.as_mut()) {
            (DisturbanceSpec::Constant(d), _) => d.clone(),
            (DisturbanceSpec::Uniform { .. }, Some(rng)) => {
                let dom = &self.model.diagrams().domain;
                uniform_in_box(rng, &dom.lo, &dom.hi)
            }
            (DisturbanceSpec::Uniform { .. }, None) => {
                unreachable!("rng created for uniform disturbances")
            }
        };
        let v = match &self.scenario.control {
            ControlSpec::OpenLoop(v) => v.clone(),
            ControlSpec::ClosedLoop(c) => c.control_law(&self.x),
        };
        let (xnext, flows) = match self.model.step(&self.x, &v, &d) {
            Ok(r) => r,
            Err(e) => {
                self.stopped = true;
                return Some(Err(e));
            }
        };
        if let Some(tol) = self.scenario.stationary_tol {
            let moved = xnext
                .iter()
                .zip(&self.x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if moved < tol {
                self.stopped = true;
            }
        }
        let tr = Transition {
            t: self.t,
            x: std::mem::replace(&mut self.x, xnext.clone()),
            v,
            d,
            xnext,
            flows,
        };
        self.t += 1;
        Some(Ok(tr))
    }

    /// Whether the run ended on the stationarity test.
    pub fn stopped_early(&self) -> bool {
        self.stopped && self.t < self.scenario.horizon
    }
}

/// Full history of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    /// `states[t]` for `t = 0..=steps`.
    pub states: Vec<Vec<f64>>,
    /// Inflow applied at each step.
    pub inflows: Vec<Vec<f64>>,
    pub disturbances: Vec<Vec<f64>>,
    pub flows: Vec<FlowBreakdown>,
    /// `|x(t) - x*|` per state.
    pub deviation: Vec<f64>,
    /// `V(x(t))` per state.
    pub lyapunov: Vec<Vec<f64>>,
    pub reference: Vec<f64>,
    /// Largest per-step mass-balance residual.
    pub mass_residual_max: f64,
    pub stopped_early: bool,
}

impl TrajectoryRecord {
    pub fn steps(&self) -> usize {
        self.inflows.len()
    }

    pub fn terminal(&self) -> &[f64] {
        self.states.last().expect("record holds the initial state")
    }

    pub fn terminal_deviation(&self) -> f64 {
        *self
            .deviation
            .last()
            .expect("record holds the initial state")
    }
}

/// Runs a scenario, measuring deviations against `reference`.
pub fn run_scenario(
    model: &Model,
    scenario: &ScenarioConfig,
    reference: &[f64],
) -> Result<TrajectoryRecord> {
    if reference.len() != model.n() {
        return Err(NetError::Dimension(
            "reference state has the wrong length".into(),
        ));
    }
    let mut sim = Simulation::new(model, scenario)?;
    let mut rec = TrajectoryRecord {
        states: vec![scenario.x0.clone()],
        inflows: Vec::new(),
        disturbances: Vec::new(),
        flows: Vec::new(),
        deviation: vec![dist(&scenario.x0, reference)],
        lyapunov: vec![lyapunov_eval(&scenario.x0, reference)],
        reference: reference.to_vec(),
        mass_residual_max: 0.0,
        stopped_early: false,
    };
    while let Some(tr) = sim.advance() {
        let tr = tr?;
        rec.mass_residual_max = rec
            .mass_residual_max
            .max(tr.flows.mass_balance_residual(&tr.x, &tr.xnext));
        rec.deviation.push(dist(&tr.xnext, reference));
        rec.lyapunov.push(lyapunov_eval(&tr.xnext, reference));
        rec.states.push(tr.xnext);
        rec.inflows.push(tr.v);
        rec.disturbances.push(tr.d);
        rec.flows.push(tr.flows);
    }
    rec.stopped_early = sim.stopped_early();
    Ok(rec)
}

/// Least-squares fit of `ln|x(t) - x*| = ln M - sigma t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecayFit {
    /// Fewer than two deviations above the threshold after burn-in.
    Converged,
    Fit {
        sigma: f64,
        m_hat: f64,
        /// Root-mean-square residual of the log fit.
        residual: f64,
        points: usize,
    },
}

impl DecayFit {
    pub fn sigma(&self) -> Option<f64> {
        match self {
            DecayFit::Fit { sigma, .. } => Some(*sigma),
            DecayFit::Converged => None,
        }
    }
}

/// Fits an exponential decay to `deviation[t]`, `t >= burn_in`, using only
/// entries above [`CONVERGED_DEVIATION`].
pub fn estimate_decay(deviation: &[f64], burn_in: usize) -> DecayFit {
    let pts: Vec<(f64, f64)> = deviation
        .iter()
        .enumerate()
        .skip(burn_in)
        .filter(|(_, &d)| d > CONVERGED_DEVIATION)
        .map(|(t, &d)| (t as f64, d.ln()))
        .collect();
    if pts.len() < 2 {
        return DecayFit::Converged;
    }
    let k = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let residual = (pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum::<f64>()
        / k)
        .sqrt();
    DecayFit::Fit {
        sigma: -slope,
        m_hat: intercept.exp(),
        residual,
        points: pts.len(),
    }
}

/// Outcome of [`gridlock_run`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridlockReport {
    /// Cells of the cycle (0-based).
    pub cycle: Vec<usize>,
    /// `max_t max_k |x_k(t) - x_k(0)|` over the cycle cells.
    pub max_cycle_change: f64,
    /// Whether every cycle cell started at capacity.
    pub jammed_start: bool,
    pub steps: usize,
}

impl GridlockReport {
    /// Jammed start and no motion of the cycle densities.
    pub fn gridlocked(&self) -> bool {
        self.jammed_start && self.max_cycle_change == 0.0
    }
}

/// Simulates a cyclic network under random inflows in `[0, 2 vmax]` and
/// random disturbances, tracking the cycle densities.
pub fn gridlock_run(
    model: &Model,
    x0: &[f64],
    horizon: usize,
    seed: u64,
) -> Result<(GridlockReport, TrajectoryRecord)> {
    let cycle = find_cycle(model.spec().p()).ok_or_else(|| {
        NetError::Misuse("network is acyclic; use the stability pipeline instead".into())
    })?;
    let n = model.n();
    if x0.len() != n {
        return Err(NetError::Dimension("x0 has the wrong length".into()));
    }
    let dom = &model.diagrams().domain;
    let a = model.spec().a();
    let vmax = model.spec().vmax();
    let mut rng = stream_rng(seed, 0);
    let mut x = x0.to_vec();
    let mut rec = TrajectoryRecord {
        states: vec![x.clone()],
        inflows: Vec::new(),
        disturbances: Vec::new(),
        flows: Vec::new(),
        deviation: vec![0.0],
        lyapunov: vec![lyapunov_eval(&x, x0)],
        reference: x0.to_vec(),
        mass_residual_max: 0.0,
        stopped_early: false,
    };
    let mut max_change: f64 = 0.0;
    for _ in 0..horizon {
        let v: Vec<f64> = vmax
            .iter()
            .map(|&m| 2.0 * m * rng.random::<f64>())
            .collect();
        let d = uniform_in_box(&mut rng, &dom.lo, &dom.hi);
        let (xn, fl) = model.step(&x, &v, &d)?;
        for &k in &cycle {
            max_change = max_change.max((xn[k] - x0[k]).abs());
        }
        rec.mass_residual_max = rec.mass_residual_max.max(fl.mass_balance_residual(&x, &xn));
        rec.deviation.push(dist(&xn, x0));
        rec.lyapunov.push(lyapunov_eval(&xn, x0));
        rec.states.push(xn.clone());
        rec.inflows.push(v);
        rec.disturbances.push(d);
        rec.flows.push(fl);
        x = xn;
    }
    let jammed_start = cycle.iter().all(|&k| x0[k] == a[k]);
    Ok((
        GridlockReport {
            cycle,
            max_cycle_change: max_change,
            jammed_start,
            steps: horizon,
        },
        rec,
    ))
}

/// Jams every cell of a cycle (other cells empty) and runs [`gridlock_run`].
pub fn gridlock_demo(
    model: &Model,
    horizon: usize,
    seed: u64,
) -> Result<(GridlockReport, TrajectoryRecord)> {
    let cycle = find_cycle(model.spec().p()).ok_or_else(|| {
        NetError::Misuse("network is acyclic; use the stability pipeline instead".into())
    })?;
    let mut x0 = vec![0.0; model.n()];
    for &k in &cycle {
        x0[k] = model.spec().a()[k];
    }
    gridlock_run(model, &x0, horizon, seed)
}

/// Writes `t, x_1..x_n, v_1..v_n, deviation, V_1..V_2n` with one row per
/// state; inflow fields of the final state are empty.
pub fn export_csv(record: &TrajectoryRecord, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| NetError::io(path, e))?;
    write_csv(record, file)?;
    Ok(())
}

/// CSV rendering of a record into any writer.
pub fn write_csv<W: std::io::Write>(record: &TrajectoryRecord, out: W) -> Result<()> {
    let n = record.reference.len();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("x_{i}")));
    header.extend((1..=n).map(|i| format!("v_{i}")));
    header.push("deviation".into());
    header.extend((1..=2 * n).map(|i| format!("V_{i}")));
    w.write_record(&header)?;
    let fmt = |v: f64| format!("{v:.15e}");
    for (t, x) in record.states.iter().enumerate() {
        let mut row = vec![t.to_string()];
        row.extend(x.iter().map(|&v| fmt(v)));
        match record.inflows.get(t) {
            Some(v) => row.extend(v.iter().map(|&v| fmt(v))),
            None => row.extend(std::iter::repeat_n(String::new(), n)),
        }
        row.push(fmt(record.deviation[t]));
        row.extend(record.lyapunov[t].iter().map(|&v| fmt(v)));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| NetError::Io {
        path: "<csv>".into(),
        source: e,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::{self, VSTAR, XSTAR};

    fn model() -> Model {
        Model::new(presets::freeway_network(), presets::freeway_diagrams()).unwrap()
    }

    #[test]
    fn decay_of_geometric_sequence() {
        let dev: Vec<f64> = (0..30).map(|t| 0.5f64.powi(t)).collect();
        match estimate_decay(&dev, 0) {
            DecayFit::Fit { sigma, m_hat, .. } => {
                assert!((sigma - 2f64.ln()).abs() < 1e-6);
                assert!((m_hat - 1.0).abs() < 1e-6);
            }
            DecayFit::Converged => panic!("expected a fit"),
        }
        assert_eq!(estimate_decay(&[0.0, 0.0, 1e-13], 0), DecayFit::Converged);
    }

    #[test]
    fn closed_loop_from_equilibrium_stays() {
        let sc = ScenarioConfig {
            x0: XSTAR.to_vec(),
            horizon: 50,
            disturbance: DisturbanceSpec::Uniform { seed: 3, stream: 0 },
            control: ControlSpec::ClosedLoop(ControllerConfig::freeway_experiment()),
            step_seconds: 15.0,
            stationary_tol: None,
        };
        let rec = run_scenario(&model(), &sc, &XSTAR).unwrap();
        assert_eq!(rec.states.len(), 51);
        assert!(rec.deviation.iter().all(|&d| d < 1e-9));
    }

    #[test]
    fn replay_matches_recorded_states() {
        let m = model();
        let sc = ScenarioConfig {
            x0: vec![100.0, 120.0, 10.0, 20.0, 110.0, 80.0, 5.0, 90.0],
            horizon: 40,
            disturbance: DisturbanceSpec::Uniform { seed: 9, stream: 2 },
            control: ControlSpec::ClosedLoop(ControllerConfig::freeway_experiment()),
            step_seconds: 15.0,
            stationary_tol: None,
        };
        let rec = run_scenario(&m, &sc, &XSTAR).unwrap();
        for t in 0..rec.steps() {
            let (xn, _) = m
                .step(&rec.states[t], &rec.inflows[t], &rec.disturbances[t])
                .unwrap();
            assert_eq!(xn, rec.states[t + 1]);
        }
    }

    #[test]
    fn empty_horizon_rejected() {
        let sc = ScenarioConfig {
            x0: XSTAR.to_vec(),
            horizon: 0,
            disturbance: DisturbanceSpec::Constant(vec![1.0, 0.0, 1.0, 0.26]),
            control: ControlSpec::OpenLoop(VSTAR.to_vec()),
            step_seconds: 15.0,
            stationary_tol: None,
        };
        assert!(run_scenario(&model(), &sc, &XSTAR).is_err());
    }

    #[test]
    fn csv_one_step_has_two_rows() {
        let sc = ScenarioConfig {
            x0: XSTAR.to_vec(),
            horizon: 1,
            disturbance: DisturbanceSpec::Constant(vec![1.0, 0.0, 1.0, 0.26]),
            control: ControlSpec::OpenLoop(VSTAR.to_vec()),
            step_seconds: 15.0,
            stationary_tol: None,
        };
        let rec = run_scenario(&model(), &sc, &XSTAR).unwrap();
        let mut buf = Vec::new();
        write_csv(&rec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("t,x_1,"));
        assert!(lines[0].ends_with("V_16"));
        assert!(lines[2].contains(",,,,,,,,"));
        assert_eq!(lines[1].split(',').count(), 1 + 8 + 8 + 1 + 16);
    }

    #[test]
    fn acyclic_gridlock_is_misuse() {
        assert!(matches!(
            gridlock_demo(&model(), 10, 1),
            Err(NetError::Misuse(_))
        ));
    }

    #[test]
    fn scenario_json_roundtrip() {
        let sc = ScenarioConfig {
            x0: XSTAR.to_vec(),
            horizon: 5,
            disturbance: DisturbanceSpec::Uniform { seed: 1, stream: 0 },
            control: ControlSpec::ClosedLoop(ControllerConfig::freeway_experiment()),
            step_seconds: 15.0,
            stationary_tol: Some(1e-9),
        };
        let text = serde_json::to_string(&sc.to_file()).unwrap();
        assert_eq!(ScenarioConfig::from_json_str(&text).unwrap(), sc);
    }
}
