//! Command-line front end.
//!
//! Exit codes: 0 when every check passes, 1 when a certificate or
//! reproduction check fails, 2 on invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use netstab::analysis::{analyze, build_core, AnalysisOptions, GammaOptions};
use netstab::controller::{synthesize, ControllerConfig};
use netstab::diagram::Diagrams;
use netstab::dynamics::Model;
use netstab::equilibrium::solve_uep;
use netstab::network::{find_cycle, topological_sort, NetworkSpec};
use netstab::presets;
use netstab::reproduce::reproduce;
use netstab::sim::{
    estimate_decay, export_csv, gridlock_demo, run_scenario, ControlSpec, DisturbanceSpec,
    ScenarioConfig,
};
use netstab::NetError;

#[derive(Parser)]
#[command(
    name = "netstab",
    version,
    about = "Flow-network simulation and stability certificates"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Network JSON; the built-in freeway instance when omitted.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Diagram JSON; the built-in freeway diagrams when omitted.
    #[arg(long)]
    diagrams: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Equilibrium {
    /// Equilibrium inflow as comma-separated values; the freeway v* when omitted.
    #[arg(long, value_delimiter = ',')]
    vstar: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Checks the network structure and reports a topological order or a cycle.
    Validate {
        #[command(flatten)]
        inputs: Inputs,
    },
    /// Computes the stability certificate.
    Analyze {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        eq: Equilibrium,
        /// Controller JSON; synthesized when omitted.
        #[arg(long)]
        controller: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory receiving certificate.json; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solves for the uncongested equilibrium.
    SolveUep {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        eq: Equilibrium,
        /// Directory receiving equilibrium.json and flows.csv; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Derives the saturated feedback law from the certificate constants.
    Synthesize {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        eq: Equilibrium,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Directory receiving controller.json; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a scenario and writes its trajectory.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        #[command(flatten)]
        eq: Equilibrium,
        #[arg(long)]
        scenario: PathBuf,
        /// Replaces the controller of a closed-loop scenario.
        #[arg(long)]
        controller: Option<PathBuf>,
        /// Replaces the seed of a random-disturbance scenario.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory receiving trajectory.csv and summary.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Jams a cycle of a cyclic network and checks that it never clears.
    GridlockDemo {
        /// Cyclic network JSON; the built-in three-cell ring when omitted.
        #[arg(long)]
        network: Option<PathBuf>,
        #[arg(long)]
        diagrams: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Directory receiving gridlock.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reruns the freeway experiment suite.
    ReproducePaper {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "reproduction")]
        out: PathBuf,
    },
}

/// Failure of a subcommand, split by exit code.
enum Failure {
    Check(String),
    Input(NetError),
}

impl From<NetError> for Failure {
    fn from(e: NetError) -> Self {
        match e {
            NetError::H3Violation(_)
            | NetError::Infeasible(_)
            | NetError::Structural(_)
            | NetError::NonUniformEquilibrium { .. } => Failure::Check(e.to_string()),
            _ => Failure::Input(e),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn load_model(inputs: &Inputs) -> netstab::Result<Model> {
    let spec = match &inputs.network {
        Some(p) => NetworkSpec::from_path(p)?,
        None => presets::freeway_network(),
    };
    let diagrams = match &inputs.diagrams {
        Some(p) => Diagrams::from_path(p)?,
        None => presets::freeway_diagrams(),
    };
    diagrams.check_matches(&spec)?;
    Model::new(spec, diagrams)
}

fn vstar_of(eq: &Equilibrium, n: usize) -> netstab::Result<Vec<f64>> {
    let v = eq.vstar.clone().unwrap_or_else(|| presets::VSTAR.to_vec());
    if v.len() != n {
        return Err(NetError::Dimension(format!(
            "--vstar has {} entries for {n} cells",
            v.len()
        )));
    }
    Ok(v)
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>, name: &str) -> netstab::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| NetError::io(dir, e))?;
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| NetError::io(&path, e))?;
            eprintln!("wrote {}", path.display());
        }
        None => print_stdout(&text),
    }
    Ok(())
}

/// Prints to stdout, ignoring a closed pipe.
fn print_stdout(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn check(ok: bool, what: &str) -> Outcome {
    if ok {
        Ok(())
    } else {
        Err(Failure::Check(what.to_string()))
    }
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Validate { inputs } => {
            let model = load_model(&inputs)?;
            let spec = model.spec();
            let report = spec.validate();
            let order = topological_sort(spec.p())
                .ok()
                .map(|o| o.perm().iter().map(|i| i + 1).collect::<Vec<_>>());
            let cycle = find_cycle(spec.p()).map(|c| c.iter().map(|i| i + 1).collect::<Vec<_>>());
            #[derive(Serialize)]
            struct Out<'a> {
                validation: &'a netstab::network::ValidationReport,
                topological_order: Option<Vec<usize>>,
                cycle: Option<Vec<usize>>,
            }
            emit(
                &Out {
                    validation: &report,
                    topological_order: order,
                    cycle: cycle.clone(),
                },
                None,
                "",
            )?;
            check(
                report.is_ok() && cycle.is_none(),
                "network is invalid or cyclic",
            )
        }
        Command::Analyze {
            inputs,
            eq,
            controller,
            seed,
            out,
        } => {
            let model = load_model(&inputs)?;
            let vstar = vstar_of(&eq, model.n())?;
            let ctrl = controller.map(ControllerConfig::from_path).transpose()?;
            let opts = AnalysisOptions {
                seed,
                ..AnalysisOptions::default()
            };
            let cert = analyze(&model, &vstar, ctrl.as_ref(), opts)?;
            emit(&cert, out.as_deref(), "certificate.json")?;
            check(cert.passed(), "certificate conditions failed; see flags")
        }
        Command::SolveUep { inputs, eq, out } => {
            let model = load_model(&inputs)?;
            let vstar = vstar_of(&eq, model.n())?;
            let pair = solve_uep(&model, &vstar)?;
            if let Some(dir) = out.as_deref() {
                emit(&pair, Some(dir), "equilibrium.json")?;
                let path = dir.join("flows.csv");
                let mut w = csv::Writer::from_path(&path).map_err(NetError::from)?;
                w.write_record(["cell", "x_star", "v_star", "flow"])
                    .map_err(NetError::from)?;
                for i in 0..model.n() {
                    w.write_record([
                        (i + 1).to_string(),
                        format!("{:.15e}", pair.xstar[i]),
                        format!("{:.15e}", pair.vstar[i]),
                        format!("{:.15e}", pair.flows[i]),
                    ])
                    .map_err(NetError::from)?;
                }
                w.flush().map_err(|e| NetError::io(&path, e))?;
            } else {
                emit(&pair, None, "")?;
            }
            Ok(())
        }
        Command::Synthesize {
            inputs,
            eq,
            tau,
            out,
        } => {
            let model = load_model(&inputs)?;
            let vstar = vstar_of(&eq, model.n())?;
            let pair = solve_uep(&model, &vstar)?;
            let core = build_core(&model, &pair, GammaOptions::default())?;
            let ctrl = synthesize(&pair, &core, tau)?;
            emit(&ctrl.to_file(), out.as_deref(), "controller.json").map_err(Failure::from)
        }
        Command::Simulate {
            inputs,
            eq,
            scenario,
            controller,
            seed,
            out,
        } => {
            let model = load_model(&inputs)?;
            let mut sc = ScenarioConfig::from_path(&scenario)?;
            if let Some(path) = controller {
                let ctrl = ControllerConfig::from_path(path)?;
                match &mut sc.control {
                    ControlSpec::ClosedLoop(c) => *c = ctrl,
                    ControlSpec::OpenLoop(_) => {
                        return Err(NetError::Misuse(
                            "--controller given for an open-loop scenario".into(),
                        )
                        .into())
                    }
                }
            }
            if let (Some(s), DisturbanceSpec::Uniform { seed, .. }) = (seed, &mut sc.disturbance) {
                *seed = s;
            }
            let reference = match &sc.control {
                ControlSpec::ClosedLoop(c) => c.xstar.clone(),
                ControlSpec::OpenLoop(_) => solve_uep(&model, &vstar_of(&eq, model.n())?)?.xstar,
            };
            let rec = run_scenario(&model, &sc, &reference)?;
            #[derive(Serialize)]
            struct Summary {
                steps: usize,
                stopped_early: bool,
                terminal_state: Vec<f64>,
                terminal_deviation: f64,
                decay: netstab::sim::DecayFit,
                mass_residual_max: f64,
            }
            let summary = Summary {
                steps: rec.steps(),
                stopped_early: rec.stopped_early,
                terminal_state: rec.terminal().to_vec(),
                terminal_deviation: rec.terminal_deviation(),
                decay: estimate_decay(&rec.deviation, 0),
                mass_residual_max: rec.mass_residual_max,
            };
            if let Some(dir) = out.as_deref() {
                std::fs::create_dir_all(dir).map_err(|e| NetError::io(dir, e))?;
                export_csv(&rec, dir.join("trajectory.csv"))?;
            }
            emit(&summary, out.as_deref(), "summary.json")?;
            Ok(())
        }
        Command::GridlockDemo {
            network,
            diagrams,
            horizon,
            seed,
            out,
        } => {
            let model = match network {
                None => Model::new(presets::ring_network(), presets::ring_diagrams())?,
                Some(path) => {
                    let Some(dpath) = diagrams else {
                        return Err(NetError::Misuse("--network requires --diagrams".into()).into());
                    };
                    load_model(&Inputs {
                        network: Some(path),
                        diagrams: Some(dpath),
                    })?
                }
            };
            let (report, rec) = gridlock_demo(&model, horizon, seed)?;
            if let Some(dir) = out.as_deref() {
                std::fs::create_dir_all(dir).map_err(|e| NetError::io(dir, e))?;
                export_csv(&rec, dir.join("gridlock.csv"))?;
            }
            emit(&report, None, "")?;
            check(report.gridlocked(), "cycle densities moved")
        }
        Command::ReproducePaper { seed, out } => {
            let summary = reproduce(seed, Some(&out))?;
            eprintln!("wrote {} files to {}", summary.files.len(), out.display());
            print_stdout(&serde_json::to_string_pretty(&summary).map_err(NetError::from)?);
            check(summary.passed, "a reproduction check failed")
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
