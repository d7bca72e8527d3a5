//! CLI contract tests: exit codes, artifact determinism, and JSON
//! round-trips, driven through the same entry point as the binary.

use sgmpc::cli::{run, CliError};
use sgmpc::config::RuleExport;
use std::path::Path;

fn cli(args: &[&str]) -> i32 {
    let full: Vec<String> = std::iter::once("sgmpc".to_string())
        .chain(args.iter().map(|s| s.to_string()))
        .collect();
    run(full.into_iter())
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

const OBSTACLE_CFG: &str = r#"
scenario = "obstacle"
p = 2
mode = "open-loop"
quad_seed = 7
mc_seed = 42
mc_samples = 500
"#;

#[test]
fn run_succeeds_and_artifacts_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out1 = tmp.path().join("a");
    let out2 = tmp.path().join("b");
    for out in [&out1, &out2] {
        let code = cli(&["run", "--config", &cfg, "--output-dir", &out.display().to_string()]);
        assert_eq!(code, 0);
    }
    // everything except timing must be byte-identical across reruns
    for file in ["trajectory.csv", "solution.json"] {
        let a = std::fs::read(out1.join(file)).unwrap();
        let b = std::fs::read(out2.join(file)).unwrap();
        assert_eq!(a, b, "{file} differs between identical runs");
    }
    assert!(out1.join("timing.json").exists());
}

#[test]
fn invalid_beta_override_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out = tmp.path().join("out").display().to_string();
    let code = cli(&[
        "run",
        "--config",
        &cfg,
        "--set",
        "beta=0.4",
        "--output-dir",
        &out,
    ]);
    assert_eq!(code, 1);
}

#[test]
fn malformed_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "scenario = [not toml");
    assert_eq!(cli(&["validate", "--config", &cfg]), 1);
}

#[test]
fn unknown_scenario_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "scenario = \"no-such-benchmark\"\np = 2\n");
    assert_eq!(cli(&["validate", "--config", &cfg]), 1);
}

#[test]
fn missing_config_file_exits_one() {
    assert_eq!(cli(&["validate", "--config", "/nonexistent/run.toml"]), 1);
}

#[test]
fn too_few_mc_samples_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out = tmp.path().join("out").display().to_string();
    let code = cli(&[
        "compare-mc",
        "--config",
        &cfg,
        "--samples",
        "1",
        "--output-dir",
        &out,
    ]);
    assert_eq!(code, 1);
}

#[test]
fn unattainable_confidence_exits_three() {
    // kappa = sqrt(beta/(1-beta)) ~ 100 pushes the required margin past
    // anything reachable within the input bounds
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out = tmp.path().join("out").display().to_string();
    let code = cli(&[
        "run",
        "--config",
        &cfg,
        "--set",
        "beta=0.9999",
        "--output-dir",
        &out,
    ]);
    assert_eq!(code, 3);
}

#[test]
fn quadrature_failure_maps_to_exit_two() {
    let err = CliError::from(sgmpc::quad::QuadError::NoExactRuleFound {
        residual: 1e-3,
        m: 5,
    });
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn validate_prints_summary_and_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    assert_eq!(cli(&["validate", "--config", &cfg]), 0);
}

#[test]
fn emit_quadrature_round_trips_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out = tmp.path().join("out");
    let code = cli(&[
        "emit-quadrature",
        "--config",
        &cfg,
        "--output-dir",
        &out.display().to_string(),
    ]);
    assert_eq!(code, 0);
    let text = std::fs::read_to_string(out.join("quadrature.json")).unwrap();
    let export: RuleExport = serde_json::from_str(&text).unwrap();
    let rule = export.to_rule();
    let again = serde_json::to_string_pretty(&RuleExport::from_rule(&rule)).unwrap() + "\n";
    assert_eq!(text, again, "rule JSON must round-trip byte-exactly");
    assert!(rule.residual <= 1e-8);
}

#[test]
fn emit_basis_and_galerkin_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), OBSTACLE_CFG);
    let out = tmp.path().join("out");
    let out_s = out.display().to_string();
    assert_eq!(cli(&["emit-basis", "--config", &cfg, "--output-dir", &out_s]), 0);
    assert_eq!(cli(&["emit-galerkin", "--config", &cfg, "--output-dir", &out_s]), 0);
    assert!(out.join("basis.json").exists());
    assert!(out.join("galerkin.json").exists());
}
