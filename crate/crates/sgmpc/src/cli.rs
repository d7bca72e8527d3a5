//! Command-line driver: builds the expansion basis, the quadrature rule,
//! and the lifted system for a configured scenario, solves the surrogate
//! MPC, and emits CSV/JSON artifacts. Also runs the Monte Carlo baseline
//! for timing and distribution comparisons.
//!
//! Exit codes: 0 success, 1 configuration error, 2 quadrature failure,
//! 3 solver infeasible.

use crate::basis::{gram_schmidt, OrthonormalBasis};
use crate::config::{
    fmt_f64, load_run_config, resolve_scenario, BasisExport, ConfigError, GalerkinExport,
    RuleExport, RunConfig, RunMode, ScenarioConfig,
};
use crate::galerkin::{CoeffVector, GalerkinSystem};
use crate::mc::{compare_pdf, mc_mpc, mc_propagate};
use crate::mixture::MomentOracle;
use crate::mpc::{
    receding_horizon, solve_open_loop, MpcError, MpcSolution, SolveStatus, SolverConfig,
};
use crate::quad::{generate, QuadConfig, QuadratureRule};
use crate::scenario::Scenario;
use clap::{Parser, Subcommand};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const OUTPUT_DIR_ENV: &str = "SGMPC_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("basis construction failed: {0}")]
    Basis(#[from] crate::basis::BasisError),
    #[error("quadrature generation failed: {0}")]
    Quadrature(#[from] crate::quad::QuadError),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Mpc(#[from] MpcError),
    #[error(transparent)]
    Mc(#[from] crate::mc::McError),
    #[error("solver reported infeasible (max violation {violation:.3e})")]
    Infeasible { violation: f64 },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Write { .. } => 1,
            CliError::Quadrature(_) => 2,
            CliError::Infeasible { .. } | CliError::Mpc(MpcError::InfeasibleAtStep { .. }) => 3,
            CliError::Mc(crate::mc::McError::TooFewSamples { .. }) => 1,
            _ => 1,
        }
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "sgmpc",
    about = "Chance-constrained stochastic MPC via orthonormal polynomial expansions"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Parser)]
pub struct CommonArgs {
    /// Run configuration file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path overrides applied to the configuration, key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (falls back to config, then $SGMPC_OUTPUT_DIR, then ./out).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the full pipeline and the surrogate MPC solve.
    Run(CommonArgs),
    /// Run the pipeline and the Monte Carlo baseline, emit a comparison.
    CompareMc {
        #[command(flatten)]
        common: CommonArgs,
        /// Sample count override for the baseline.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Write the orthonormal basis as JSON.
    EmitBasis(CommonArgs),
    /// Write the quadrature rule as JSON.
    EmitQuadrature(CommonArgs),
    /// Write the lifted system matrices as JSON.
    EmitGalerkin(CommonArgs),
    /// Check a configuration file and print a summary.
    Validate(CommonArgs),
}

// ---------------------------------------------------------------------------
// pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineTiming {
    pub basis_seconds: f64,
    pub quadrature_seconds: f64,
    pub projection_seconds: f64,
    pub solve_seconds: f64,
    pub total_seconds: f64,
}

pub struct Pipeline {
    pub basis2p: OrthonormalBasis,
    pub basis: OrthonormalBasis,
    pub rule: QuadratureRule,
    pub gs: GalerkinSystem,
    pub timing: PipelineTiming,
}

/// Basis construction, quadrature generation, and Galerkin projection for
/// one scenario at polynomial order `p`.
pub fn build_pipeline(scenario: &Scenario, p: usize, quad_seed: u64) -> Result<Pipeline, CliError> {
    let t0 = std::time::Instant::now();
    let oracle = MomentOracle::for_order(&scenario.mixture, p);
    let basis2p = gram_schmidt(&oracle, scenario.mixture.dim(), 2 * p, 1e-8)?;
    let basis = basis2p.truncate(p);
    let basis_seconds = t0.elapsed().as_secs_f64();

    let t1 = std::time::Instant::now();
    let rule = generate(
        &scenario.mixture,
        &basis2p,
        &QuadConfig::for_basis(&basis2p, quad_seed),
    )?;
    let quadrature_seconds = t1.elapsed().as_secs_f64();

    let t2 = std::time::Instant::now();
    let gs = scenario.galerkin(&basis, &rule)?;
    let projection_seconds = t2.elapsed().as_secs_f64();

    Ok(Pipeline {
        basis2p,
        basis,
        rule,
        gs,
        timing: PipelineTiming {
            basis_seconds,
            quadrature_seconds,
            projection_seconds,
            solve_seconds: 0.0,
            total_seconds: t0.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionExport {
    pub scenario: String,
    pub status: String,
    pub objective: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    /// Row t = input applied at step t.
    pub u: Vec<Vec<f64>>,
}

fn status_name(s: SolveStatus) -> &'static str {
    match s {
        SolveStatus::Optimal => "optimal",
        SolveStatus::MaxIters => "max-iters",
        SolveStatus::Infeasible => "infeasible",
    }
}

fn solution_export(name: &str, sol: &MpcSolution) -> SolutionExport {
    SolutionExport {
        scenario: name.to_string(),
        status: status_name(sol.status).to_string(),
        objective: sol.objective,
        outer_iterations: sol.stats.outer_iterations,
        inner_iterations: sol.stats.inner_iterations,
        max_violation: sol.stats.max_violation,
        u: (0..sol.u_star.nrows())
            .map(|t| sol.u_star.row(t).iter().cloned().collect())
            .collect(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonExport {
    pub scenario: String,
    pub mc_samples: usize,
    pub galerkin_seconds: f64,
    pub mc_seconds: f64,
    pub speed_ratio: f64,
    pub input_diff_norm: f64,
    /// Relative trajectory-cost gap between the two optima.
    pub cost_gap_relative: f64,
    /// Two-sample KS distance per state at the final horizon step.
    pub ks_distance: Vec<f64>,
    /// Empirical violation rate per constraint under the surrogate input.
    pub violation_rate: Vec<f64>,
}

// ---------------------------------------------------------------------------
// artifact writers
// ---------------------------------------------------------------------------

fn write_text(dir: &Path, file: &str, text: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let path = dir.join(file);
    std::fs::write(&path, text).map_err(|source| CliError::Write {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable artifact");
    text.push('\n');
    write_text(dir, file, &text)
}

/// Trajectory CSV: one row per time step with per-state mean and standard
/// deviation and the applied input (blank on the final row).
fn trajectory_csv(states: &[CoeffVector], inputs: &[DVector<f64>]) -> String {
    let n_x = states[0].base_dim;
    let n_u = inputs.first().map_or(0, |u| u.len());
    let mut out = String::from("t");
    for i in 1..=n_x {
        out.push_str(&format!(",mean_{i}"));
    }
    for i in 1..=n_x {
        out.push_str(&format!(",std_{i}"));
    }
    for j in 1..=n_u {
        out.push_str(&format!(",u_{j}"));
    }
    out.push('\n');
    for (t, x) in states.iter().enumerate() {
        let (mean, var) = x.mean_var();
        out.push_str(&t.to_string());
        for v in mean.iter() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        for v in var.iter() {
            out.push(',');
            out.push_str(&fmt_f64(v.sqrt()));
        }
        for j in 0..n_u {
            out.push(',');
            if let Some(u) = inputs.get(t) {
                out.push_str(&fmt_f64(u[j]));
            }
        }
        out.push('\n');
    }
    out
}

fn output_dir(common: &CommonArgs, cfg: &RunConfig) -> PathBuf {
    common
        .output_dir
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

// ---------------------------------------------------------------------------
// subcommand implementations
// ---------------------------------------------------------------------------

fn load(common: &CommonArgs) -> Result<(RunConfig, Scenario), CliError> {
    let cfg = load_run_config(&common.config, &common.set)?;
    let scenario = resolve_scenario(&cfg)?;
    Ok((cfg, scenario))
}

pub fn cmd_run(common: &CommonArgs) -> Result<(), CliError> {
    let (cfg, scenario) = load(common)?;
    let dir = output_dir(common, &cfg);
    let mut pipeline = build_pipeline(&scenario, cfg.p, cfg.quad_seed)?;
    let gs = &pipeline.gs;
    let prob = scenario.problem_for(gs.n_p);
    let w_hat = scenario.disturbance_hat(&pipeline.basis, &pipeline.rule);

    let t0 = std::time::Instant::now();
    let (states, inputs, solution) = match cfg.mode {
        RunMode::OpenLoop => {
            let w = vec![w_hat; prob.horizon];
            let sol = solve_open_loop(&prob, gs, &w, &SolverConfig::default())?;
            if sol.status == SolveStatus::Infeasible {
                return Err(CliError::Infeasible {
                    violation: sol.stats.max_violation,
                });
            }
            let inputs: Vec<DVector<f64>> = (0..prob.horizon)
                .map(|t| sol.u_star.row(t).transpose())
                .collect();
            (sol.x_traj.clone(), inputs, sol)
        }
        RunMode::Receding => {
            let record = receding_horizon(
                &prob,
                gs,
                scenario.sim_steps,
                prob.horizon,
                &SolverConfig::default(),
                |_| w_hat.clone(),
            )?;
            let last = record.solutions.last().expect("at least one step").clone();
            (record.states, record.inputs, last)
        }
    };
    pipeline.timing.solve_seconds = t0.elapsed().as_secs_f64();
    pipeline.timing.total_seconds += pipeline.timing.solve_seconds;

    write_text(&dir, "trajectory.csv", &trajectory_csv(&states, &inputs))?;
    write_json(&dir, "solution.json", &solution_export(&scenario.name, &solution))?;
    write_json(&dir, "timing.json", &pipeline.timing)?;
    println!(
        "{}: {} in {} steps, objective {:.6e}, artifacts in {}",
        scenario.name,
        status_name(solution.status),
        states.len() - 1,
        solution.objective,
        dir.display()
    );
    Ok(())
}

pub fn cmd_compare_mc(common: &CommonArgs, samples: Option<usize>) -> Result<(), CliError> {
    let (mut cfg, scenario) = load(common)?;
    if let Some(n) = samples {
        cfg.mc_samples = n;
    }
    if cfg.mc_samples < 2 {
        return Err(CliError::Config(ConfigError::Validation {
            message: format!("mc_samples must be at least 2, got {}", cfg.mc_samples),
        }));
    }
    let dir = output_dir(common, &cfg);

    // surrogate leg, timed end to end
    let t0 = std::time::Instant::now();
    let pipeline = build_pipeline(&scenario, cfg.p, cfg.quad_seed)?;
    let gs = &pipeline.gs;
    let prob = scenario.problem_for(gs.n_p);
    let w_hat = scenario.disturbance_hat(&pipeline.basis, &pipeline.rule);
    let w = vec![w_hat; prob.horizon];
    let sol = solve_open_loop(&prob, gs, &w, &SolverConfig::default())?;
    let galerkin_seconds = t0.elapsed().as_secs_f64();
    if sol.status == SolveStatus::Infeasible {
        return Err(CliError::Infeasible {
            violation: sol.stats.max_violation,
        });
    }

    // Monte Carlo leg
    let t1 = std::time::Instant::now();
    let (mc_sol, _mc_report) = mc_mpc(&scenario, cfg.mc_samples, cfg.mc_seed, &SolverConfig::default())?;
    let mc_seconds = t1.elapsed().as_secs_f64();

    // distribution agreement at the final step under the surrogate input
    let u_seq: Vec<DVector<f64>> = (0..prob.horizon)
        .map(|t| sol.u_star.row(t).transpose())
        .collect();
    let x0 = prob.x_init.block(0);
    let (report, per_time) = mc_propagate(
        &scenario,
        |_| x0.clone(),
        &u_seq,
        prob.horizon,
        &prob.constraints,
        cfg.mc_samples,
        cfg.mc_seed,
    )?;
    let batch = scenario.mixture.sample(cfg.mc_samples, cfg.mc_seed);
    let surrogate = crate::galerkin::sample_surrogate(
        &sol.x_traj[prob.horizon],
        &pipeline.basis,
        &batch,
    )
    .expect("surrogate sampling");
    let final_mc = &per_time[prob.horizon];
    let ks: Vec<f64> = (0..gs.n_x)
        .map(|c| {
            let a: Vec<f64> = surrogate.column(c).iter().cloned().collect();
            let b: Vec<f64> = final_mc.column(c).iter().cloned().collect();
            compare_pdf(&a, &b)
        })
        .collect();
    let input_diff_norm = (&sol.u_star - &mc_sol.u_star).norm();
    let cost_gap_relative = if mc_sol.objective.abs() > 0.0 {
        (sol.objective - mc_sol.objective).abs() / mc_sol.objective.abs()
    } else {
        (sol.objective - mc_sol.objective).abs()
    };
    let export = ComparisonExport {
        scenario: scenario.name.clone(),
        mc_samples: cfg.mc_samples,
        galerkin_seconds,
        mc_seconds,
        speed_ratio: mc_seconds / galerkin_seconds,
        input_diff_norm,
        cost_gap_relative,
        ks_distance: ks,
        violation_rate: report.violation_rate.clone(),
    };
    write_json(&dir, "comparison.json", &export)?;
    println!(
        "{}: surrogate {:.3}s, baseline {:.3}s, ratio {:.2}, artifacts in {}",
        scenario.name,
        galerkin_seconds,
        mc_seconds,
        export.speed_ratio,
        dir.display()
    );
    Ok(())
}

pub fn cmd_emit(common: &CommonArgs, what: &str) -> Result<(), CliError> {
    let (cfg, scenario) = load(common)?;
    let dir = output_dir(common, &cfg);
    let pipeline = build_pipeline(&scenario, cfg.p, cfg.quad_seed)?;
    let path = match what {
        "basis" => write_json(&dir, "basis.json", &BasisExport::from_basis(&pipeline.basis))?,
        "quadrature" => write_json(&dir, "quadrature.json", &RuleExport::from_rule(&pipeline.rule))?,
        "galerkin" => write_json(
            &dir,
            "galerkin.json",
            &GalerkinExport::from_system(&pipeline.gs),
        )?,
        other => unreachable!("unknown emit target {other}"),
    };
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_validate(common: &CommonArgs) -> Result<(), CliError> {
    let (cfg, scenario) = load(common)?;
    let sc = ScenarioConfig::from_scenario(&scenario);
    println!(
        "ok: scenario {} (n_x={}, n_u={}, param_dim={}, horizon={}, constraints={}), p={}, mode={:?}",
        sc.name,
        sc.n_x,
        sc.n_u,
        sc.param_dim,
        sc.problem.horizon,
        sc.problem.constraints.len(),
        cfg.p,
        cfg.mode
    );
    Ok(())
}

/// Parses arguments, dispatches, maps errors to exit codes.
pub fn run(args: impl Iterator<Item = String>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            // clap handles --help/--version through this path
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(common) => cmd_run(common),
        Command::CompareMc { common, samples } => cmd_compare_mc(common, *samples),
        Command::EmitBasis(common) => cmd_emit(common, "basis"),
        Command::EmitQuadrature(common) => cmd_emit(common, "quadrature"),
        Command::EmitGalerkin(common) => cmd_emit(common, "galerkin"),
        Command::Validate(common) => cmd_validate(common),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
