//! Configuration file handling: a TOML schema for scenarios and run
//! settings, dotted-path overrides (`--set key=value`), and JSON export
//! structures for the intermediate pipeline objects. CSV floats are
//! written with 17 significant digits so round-trips are exact.

use crate::galerkin::{GalerkinSystem, PolyMatrix, StochasticLti};
use crate::mixture::{GaussianMixture, MultiIndex};
use crate::mpc::{AffineConstraint, MpcProblem, Tracking};
use crate::quad::QuadratureRule;
use crate::scenario::{
    default_quadrotor_model, scenario_obstacle, scenario_quadrotor, scenario_vehicle,
    Discretization, QuadReference, Scenario,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown scenario {name:?} (expected obstacle, obstacle-deterministic, vehicle, quadrotor-helix, quadrotor-step, or a .toml path)")]
    UnknownScenario { name: String },
    #[error("invalid override {entry:?}: expected key=value with a dotted key")]
    BadOverride { entry: String },
    #[error("override path {path:?} does not address a table")]
    OverridePath { path: String },
    #[error("{message}")]
    Validation { message: String },
    #[error(transparent)]
    Mixture(#[from] crate::mixture::MixtureError),
    #[error(transparent)]
    Mpc(#[from] crate::mpc::MpcError),
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
}

fn validation(message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        message: message.into(),
    }
}

// ---------------------------------------------------------------------------
// run configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    OpenLoop,
    Receding,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Builtin scenario name or a path to a scenario TOML file.
    pub scenario: String,
    /// Polynomial order of the expansion basis.
    pub p: usize,
    /// Optional confidence level applied to every chance constraint.
    #[serde(default)]
    pub beta: Option<f64>,
    /// Optional horizon replacing the scenario default.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default = "default_mode")]
    pub mode: RunMode,
    #[serde(default = "default_quad_seed")]
    pub quad_seed: u64,
    #[serde(default = "default_mc_seed")]
    pub mc_seed: u64,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    /// Quadrotor model matrices file; the embedded hover linearization is
    /// used when absent.
    #[serde(default)]
    pub model_file: Option<PathBuf>,
    /// Inline scenario definition; wins over `scenario` when present.
    #[serde(default)]
    pub scenario_def: Option<ScenarioConfig>,
}

fn default_mode() -> RunMode {
    RunMode::OpenLoop
}
fn default_quad_seed() -> u64 {
    7
}
fn default_mc_seed() -> u64 {
    42
}
fn default_mc_samples() -> usize {
    5000
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.p < 1 {
            return Err(validation("p must be at least 1"));
        }
        if let Some(b) = self.beta {
            if !(b > 0.5 && b < 1.0) {
                return Err(validation(format!(
                    "beta {b} outside the open interval (0.5, 1)"
                )));
            }
        }
        if let Some(h) = self.horizon {
            if h < 1 {
                return Err(validation("horizon must be at least 1"));
            }
        }
        if self.mc_samples < 2 {
            return Err(validation("mc_samples must be at least 2"));
        }
        Ok(())
    }
}

/// Loads a run config, applies `--set` overrides, validates.
pub fn load_run_config(path: &Path, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut value: toml::Value = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    apply_overrides(&mut value, overrides)?;
    let cfg: RunConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Applies `key.sub=value` entries to a TOML document. Values are parsed
/// as TOML literals and fall back to plain strings.
pub fn apply_overrides(doc: &mut toml::Value, overrides: &[String]) -> Result<(), ConfigError> {
    for entry in overrides {
        let (key, raw) = entry.split_once('=').ok_or_else(|| ConfigError::BadOverride {
            entry: entry.clone(),
        })?;
        let parsed: toml::Value = match format!("x = {raw}").parse::<toml::Value>() {
            Ok(toml::Value::Table(t)) => t.get("x").cloned().unwrap(),
            _ => toml::Value::String(raw.to_string()),
        };
        let parts: Vec<&str> = key.split('.').collect();
        let (last, ancestors) = parts.split_last().expect("split_once yields nonempty key");
        let mut cursor = &mut *doc;
        for part in ancestors {
            let table = cursor.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
                path: key.to_string(),
            })?;
            cursor = table
                .entry(part.to_string())
                .or_insert_with(|| toml::Value::Table(Default::default()));
        }
        let table = cursor.as_table_mut().ok_or_else(|| ConfigError::OverridePath {
            path: key.to_string(),
        })?;
        table.insert(last.to_string(), parsed);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentConfig {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// One polynomial term coeff·ξ^exponents of entry (row, col).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TermConfig {
    pub row: usize,
    pub col: usize,
    pub exponents: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintConfig {
    pub a: Vec<f64>,
    pub b: f64,
    pub beta: f64,
    pub active_times: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub c: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub y_ref: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub horizon: usize,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub constraints: Vec<ConstraintConfig>,
    #[serde(default)]
    pub tracking: Option<TrackingConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub param_dim: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub mixture: Vec<ComponentConfig>,
    pub a: Vec<TermConfig>,
    pub b: Vec<TermConfig>,
    #[serde(default)]
    pub d: Vec<TermConfig>,
    #[serde(default)]
    pub discretization: Option<Discretization>,
    #[serde(default)]
    pub disturbance: Vec<TermConfig>,
    pub problem: ProblemConfig,
    #[serde(default = "default_sim_steps")]
    pub sim_steps: usize,
}

fn default_sim_steps() -> usize {
    1
}

fn to_dmatrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ConfigError> {
    if rows.is_empty() {
        return Err(validation(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(validation(format!("{what}: ragged matrix rows")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

fn from_dmatrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn to_poly(
    terms: &[TermConfig],
    nrows: usize,
    ncols: usize,
    param_dim: usize,
    what: &str,
) -> Result<PolyMatrix, ConfigError> {
    let mut m = PolyMatrix::zeros(nrows, ncols);
    for t in terms {
        if t.row >= nrows || t.col >= ncols {
            return Err(validation(format!(
                "{what}: term at ({}, {}) outside {nrows}x{ncols}",
                t.row, t.col
            )));
        }
        if t.exponents.len() != param_dim {
            return Err(validation(format!(
                "{what}: exponent vector length {} != param_dim {param_dim}",
                t.exponents.len()
            )));
        }
        m.set_term(t.row, t.col, MultiIndex(t.exponents.clone()), t.coeff);
    }
    Ok(m)
}

fn from_poly(m: &PolyMatrix) -> Vec<TermConfig> {
    let mut out = Vec::new();
    for r in 0..m.nrows {
        for c in 0..m.ncols {
            for (alpha, coeff) in &m.entries[r * m.ncols + c] {
                out.push(TermConfig {
                    row: r,
                    col: c,
                    exponents: alpha.0.clone(),
                    coeff: *coeff,
                });
            }
        }
    }
    out
}

impl ScenarioConfig {
    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let mixture = GaussianMixture::new(
            self.mixture
                .iter()
                .map(|c| {
                    Ok((
                        c.weight,
                        DVector::from_vec(c.mean.clone()),
                        to_dmatrix(&c.cov, "mixture.cov")?,
                    ))
                })
                .collect::<Result<Vec<_>, ConfigError>>()?,
        )?;
        if mixture.dim() != self.param_dim {
            return Err(validation(format!(
                "mixture dimension {} != param_dim {}",
                mixture.dim(),
                self.param_dim
            )));
        }
        let system = StochasticLti {
            n_x: self.n_x,
            n_u: self.n_u,
            n_w: self.n_w,
            param_dim: self.param_dim,
            a: to_poly(&self.a, self.n_x, self.n_x, self.param_dim, "a")?,
            b: to_poly(&self.b, self.n_x, self.n_u, self.param_dim, "b")?,
            d: to_poly(&self.d, self.n_x, self.n_w, self.param_dim, "d")?,
        };
        let pc = &self.problem;
        if pc.x0.len() != self.n_x {
            return Err(validation(format!(
                "x0 length {} != n_x {}",
                pc.x0.len(),
                self.n_x
            )));
        }
        if pc.u_min.len() != self.n_u || pc.u_max.len() != self.n_u {
            return Err(validation("u_min/u_max length must equal n_u"));
        }
        let constraints = pc
            .constraints
            .iter()
            .map(|c| {
                if c.a.len() != self.n_x {
                    return Err(validation(format!(
                        "constraint normal length {} != n_x {}",
                        c.a.len(),
                        self.n_x
                    )));
                }
                Ok(AffineConstraint::new(
                    DVector::from_vec(c.a.clone()),
                    c.b,
                    c.beta,
                    c.active_times.clone(),
                )?)
            })
            .collect::<Result<Vec<_>, ConfigError>>()?;
        let mut problem = MpcProblem::time_invariant(
            pc.horizon,
            to_dmatrix(&pc.q, "q")?,
            to_dmatrix(&pc.r, "r")?,
            DVector::from_vec(pc.u_min.clone()),
            DVector::from_vec(pc.u_max.clone()),
            constraints,
            crate::galerkin::CoeffVector::deterministic(&DVector::from_vec(pc.x0.clone()), 1),
        );
        if problem.q[0].nrows() != self.n_x {
            return Err(validation("q must be n_x by n_x"));
        }
        if let Some(tc) = &pc.tracking {
            problem.tracking = Some(Tracking {
                c: to_dmatrix(&tc.c, "tracking.c")?,
                s: to_dmatrix(&tc.s, "tracking.s")?,
                y_ref: tc.y_ref.iter().map(|r| DVector::from_vec(r.clone())).collect(),
            });
        }
        let disturbance_poly = if self.disturbance.is_empty() {
            None
        } else {
            Some(to_poly(
                &self.disturbance,
                self.n_w,
                1,
                self.param_dim,
                "disturbance",
            )?)
        };
        Ok(Scenario {
            name: self.name.clone(),
            system,
            mixture,
            problem,
            discretization: self.discretization,
            disturbance_poly,
            sim_steps: self.sim_steps,
        })
    }

    pub fn from_scenario(s: &Scenario) -> ScenarioConfig {
        let p = &s.problem;
        ScenarioConfig {
            name: s.name.clone(),
            param_dim: s.system.param_dim,
            n_x: s.system.n_x,
            n_u: s.system.n_u,
            n_w: s.system.n_w,
            mixture: s
                .mixture
                .components()
                .iter()
                .map(|c| ComponentConfig {
                    weight: c.weight,
                    mean: c.mean.iter().cloned().collect(),
                    cov: from_dmatrix(&c.cov),
                })
                .collect(),
            a: from_poly(&s.system.a),
            b: from_poly(&s.system.b),
            d: from_poly(&s.system.d),
            discretization: s.discretization,
            disturbance: s
                .disturbance_poly
                .as_ref()
                .map(from_poly)
                .unwrap_or_default(),
            problem: ProblemConfig {
                horizon: p.horizon,
                q: from_dmatrix(&p.q[0]),
                r: from_dmatrix(&p.r[0]),
                u_min: p.u_min.iter().cloned().collect(),
                u_max: p.u_max.iter().cloned().collect(),
                x0: p.x_init.block(0).iter().cloned().collect(),
                constraints: p
                    .constraints
                    .iter()
                    .map(|c| ConstraintConfig {
                        a: c.a.iter().cloned().collect(),
                        b: c.b,
                        beta: c.beta,
                        active_times: c.active_times.clone(),
                    })
                    .collect(),
                tracking: p.tracking.as_ref().map(|t| TrackingConfig {
                    c: from_dmatrix(&t.c),
                    s: from_dmatrix(&t.s),
                    y_ref: t.y_ref.iter().map(|r| r.iter().cloned().collect()).collect(),
                }),
            },
            sim_steps: s.sim_steps,
        }
    }
}

fn quadrotor_model(
    cfg: &RunConfig,
) -> Result<crate::scenario::QuadrotorModel, ConfigError> {
    match &cfg.model_file {
        Some(path) => Ok(crate::scenario::load_quadrotor_model(path)?),
        None => Ok(default_quadrotor_model()),
    }
}

/// Resolves the `scenario` field: builtin names first, then TOML paths.
pub fn resolve_scenario(cfg: &RunConfig) -> Result<Scenario, ConfigError> {
    if let Some(def) = &cfg.scenario_def {
        return def.to_scenario();
    }
    let mut scenario = match cfg.scenario.as_str() {
        "obstacle" => scenario_obstacle(true),
        "obstacle-deterministic" => scenario_obstacle(false),
        "vehicle" => scenario_vehicle(),
        "quadrotor-helix" => {
            scenario_quadrotor(&quadrotor_model(cfg)?, QuadReference::Helix, 60)?
        }
        "quadrotor-step" => {
            scenario_quadrotor(&quadrotor_model(cfg)?, QuadReference::Step, 60)?
        }
        name => {
            if name.ends_with(".toml") {
                let text = std::fs::read_to_string(name).map_err(|source| ConfigError::Io {
                    path: name.to_string(),
                    source,
                })?;
                let sc: ScenarioConfig =
                    toml::from_str(&text).map_err(|e| ConfigError::Parse {
                        path: name.to_string(),
                        message: e.to_string(),
                    })?;
                sc.to_scenario()?
            } else {
                return Err(ConfigError::UnknownScenario {
                    name: name.to_string(),
                });
            }
        }
    };
    if let Some(beta) = cfg.beta {
        for c in &mut scenario.problem.constraints {
            *c = AffineConstraint::new(c.a.clone(), c.b, beta, c.active_times.clone())?;
        }
    }
    if let Some(h) = cfg.horizon {
        let p = &mut scenario.problem;
        p.q = vec![p.q[0].clone(); h];
        p.r = vec![p.r[0].clone(); h];
        p.horizon = h;
        for c in &mut p.constraints {
            c.active_times = (1..=h).collect();
        }
    }
    Ok(scenario)
}

// ---------------------------------------------------------------------------
// JSON exports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BasisExport {
    pub d: usize,
    pub p: usize,
    /// Graded-lexicographic exponent list, one row per monomial.
    pub ordering: Vec<Vec<u32>>,
    /// coeffs[k] = monomial coefficients of basis function k.
    pub coeffs: Vec<Vec<f64>>,
    pub gram_residual: f64,
}

impl BasisExport {
    pub fn from_basis(b: &crate::basis::OrthonormalBasis) -> Self {
        BasisExport {
            d: b.dim(),
            p: b.degree(),
            ordering: b.order.indices.iter().map(|a| a.0.clone()).collect(),
            coeffs: (0..b.len())
                .map(|k| b.coeffs.row(k).iter().cloned().collect())
                .collect(),
            gram_residual: b.gram_residual,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RuleExport {
    pub d: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub residual: f64,
    pub basis2p_id: String,
    pub negative_weight_count: usize,
}

impl RuleExport {
    pub fn from_rule(r: &QuadratureRule) -> Self {
        RuleExport {
            d: r.nodes.ncols(),
            nodes: (0..r.len())
                .map(|l| r.nodes.row(l).iter().cloned().collect())
                .collect(),
            weights: r.weights.iter().cloned().collect(),
            residual: r.residual,
            basis2p_id: r.basis2p_id.clone(),
            negative_weight_count: r.negative_weight_count,
        }
    }

    pub fn to_rule(&self) -> QuadratureRule {
        let m = self.nodes.len();
        QuadratureRule {
            nodes: DMatrix::from_fn(m, self.d, |r, c| self.nodes[r][c]),
            weights: DVector::from_vec(self.weights.clone()),
            residual: self.residual,
            basis2p_id: self.basis2p_id.clone(),
            negative_weight_count: self.negative_weight_count,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GalerkinExport {
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub n_p: usize,
    pub a_hat: Vec<Vec<f64>>,
    pub b_hat: Vec<Vec<f64>>,
    pub d_hat: Vec<Vec<f64>>,
    pub gramian: Vec<Vec<f64>>,
    pub rule_residual: f64,
}

impl GalerkinExport {
    pub fn from_system(gs: &GalerkinSystem) -> Self {
        GalerkinExport {
            n_x: gs.n_x,
            n_u: gs.n_u,
            n_w: gs.n_w,
            n_p: gs.n_p,
            a_hat: from_dmatrix(&gs.a_hat),
            b_hat: from_dmatrix(&gs.b_hat),
            d_hat: from_dmatrix(&gs.d_hat),
            gramian: from_dmatrix(&gs.v),
            rule_residual: gs.rule_residual,
        }
    }
}

/// 17-significant-digit float formatting (round-trip exact for f64).
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
