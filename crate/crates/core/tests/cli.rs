use std::path::PathBuf;
use std::process::Command;

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn run(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_netstab"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap(),
        String::from_utf8(out.stdout).unwrap(),
    )
}

#[test]
fn validate_exit_codes() {
    let net = data("freeway_network.json");
    let dg = data("freeway_diagrams.json");
    let (code, out) = run(&[
        "validate",
        "--network",
        net.to_str().unwrap(),
        "--diagrams",
        dg.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("topological_order"));
    let ring = data("ring_network.json");
    let ring_dg = data("ring_diagrams.json");
    let (code, out) = run(&[
        "validate",
        "--network",
        ring.to_str().unwrap(),
        "--diagrams",
        ring_dg.to_str().unwrap(),
    ]);
    assert_eq!(code, 1);
    assert!(out.contains("cycle"));
}

#[test]
fn malformed_input_is_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"n\": 2}").unwrap();
    assert_eq!(run(&["validate", "--network", bad.to_str().unwrap()]).0, 2);
    assert_eq!(run(&["solve-uep", "--vstar", "30,0,0,0,12.5,0,0,0"]).0, 2);
    assert_eq!(run(&["solve-uep", "--vstar", "1,2"]).0, 2);
    let net = data("freeway_network.json");
    let dg = data("freeway_diagrams.json");
    assert_eq!(
        run(&[
            "gridlock-demo",
            "--network",
            net.to_str().unwrap(),
            "--diagrams",
            dg.to_str().unwrap()
        ])
        .0,
        2
    );
}

#[test]
fn analyze_and_gridlock_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["analyze", "--out", out]).0, 0);
    let cert: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("certificate.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(cert["rho"], 0.991);
    assert!(cert["flags"]["contraction"].as_bool().unwrap());
    // the experiment floor is too large for the computed decay constant
    let ctrl = data("experiment_controller.json");
    assert_eq!(
        run(&["analyze", "--controller", ctrl.to_str().unwrap()]).0,
        1
    );
    let (code, out) = run(&["gridlock-demo", "--horizon", "200"]);
    assert_eq!(code, 0);
    assert!(out.contains("\"max_cycle_change\": 0.0"));
}

#[test]
fn simulate_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let sc = data("closed_loop_random.json");
    let (code, _) = run(&[
        "simulate",
        "--scenario",
        sc.to_str().unwrap(),
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 502);
    assert!(dir.path().join("summary.json").exists());
}
