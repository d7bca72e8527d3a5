//! Benchmark scenarios: a 2-state obstacle-avoidance system with
//! multiplicative parameter uncertainty, a vehicle path-following model with
//! uncertain tire cornering stiffness, and a 12-state quadrotor hover
//! linearization with additive position disturbances. Also houses the
//! continuous-to-discrete conversion used by the continuous-time models.

use crate::basis::OrthonormalBasis;
use crate::galerkin::{
    expand_function, project_matrices, project_nodes, CoeffVector, GalerkinSystem, PolyMatrix,
    StochasticLti,
};
use crate::mixture::{GaussianMixture, MultiIndex};
use crate::mpc::{AffineConstraint, MpcProblem, Tracking};
use crate::quad::QuadratureRule;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("matrix exponential series did not converge within {terms} terms")]
    NonConvergentSeries { terms: usize },
    #[error("quadrotor model matrices missing: {path}")]
    MissingModelConfig { path: String },
    #[error("cannot parse quadrotor model {path}: {message}")]
    ModelParse { path: String, message: String },
    #[error("model matrix {name} has shape {got_rows}x{got_cols}, expected {rows}x{cols}")]
    BadModelShape {
        name: String,
        rows: usize,
        cols: usize,
        got_rows: usize,
        got_cols: usize,
    },
    #[error(transparent)]
    Mixture(#[from] crate::mixture::MixtureError),
    #[error(transparent)]
    Mpc(#[from] crate::mpc::MpcError),
    #[error(transparent)]
    Galerkin(#[from] crate::galerkin::GalerkinError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscMethod {
    ZeroOrderHold,
    ForwardEuler,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Discretization {
    pub method: DiscMethod,
    pub dt: f64,
}

// ---------------------------------------------------------------------------
// continuous-to-discrete conversion
// ---------------------------------------------------------------------------

/// e^M by scaling-and-squaring with a truncated Taylor series.
fn expm(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>, ScenarioError> {
    let n = m.nrows();
    let norm = m.amax();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil().max(0.0) as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut result = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    let max_terms = 80;
    let mut converged = false;
    for k in 1..=max_terms {
        term = (&term * &scaled) / k as f64;
        result += &term;
        if term.amax() <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ScenarioError::NonConvergentSeries { terms: max_terms });
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Converts ẋ = Ax + Bu to x⁺ = A_d x + B_d u. Zero-order hold evaluates
/// the exponential of the augmented matrix [[A, B], [0, 0]]; forward Euler
/// uses A_d = I + dt·A, B_d = dt·B.
pub fn discretize(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    dt: f64,
    method: DiscMethod,
) -> Result<(DMatrix<f64>, DMatrix<f64>), ScenarioError> {
    assert!(dt > 0.0, "dt must be positive");
    let n = a.nrows();
    let m = b.ncols();
    match method {
        DiscMethod::ForwardEuler => Ok((DMatrix::identity(n, n) + a * dt, b * dt)),
        DiscMethod::ZeroOrderHold => {
            let mut aug = DMatrix::zeros(n + m, n + m);
            aug.view_mut((0, 0), (n, n)).copy_from(&(a * dt));
            aug.view_mut((0, n), (n, m)).copy_from(&(b * dt));
            let e = expm(&aug, 1e-12)?;
            let a_d = e.view((0, 0), (n, n)).into_owned();
            let b_d = e.view((0, n), (n, m)).into_owned();
            Ok((a_d, b_d))
        }
    }
}

// ---------------------------------------------------------------------------
// scenario container
// ---------------------------------------------------------------------------

/// A benchmark problem bundle. `problem` is stored with a placeholder
/// single-mode initial state; call [`Scenario::problem_for`] once the
/// basis size is known.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub system: StochasticLti,
    pub mixture: GaussianMixture,
    pub problem: MpcProblem,
    /// Present iff `system` holds continuous-time matrices.
    pub discretization: Option<Discretization>,
    /// Polynomial map ξ → ω driving the additive disturbance channel,
    /// absent when the scenario has no disturbance.
    pub disturbance_poly: Option<PolyMatrix>,
    /// Suggested closed-loop simulation length (receding-horizon steps).
    pub sim_steps: usize,
}

impl Scenario {
    /// The MPC problem with the initial state lifted to `n_p` modes.
    pub fn problem_for(&self, n_p: usize) -> MpcProblem {
        let mut p = self.problem.clone();
        p.x_init = CoeffVector::deterministic(&self.problem.x_init.block(0), n_p);
        p
    }

    /// Builds the lifted coefficient system. Continuous-time scenarios are
    /// discretized at each quadrature node before projection, which keeps
    /// the projection exact with respect to the rule.
    pub fn galerkin(
        &self,
        basis: &OrthonormalBasis,
        rule: &QuadratureRule,
    ) -> Result<GalerkinSystem, ScenarioError> {
        match self.discretization {
            None => Ok(project_matrices(&self.system, basis, rule)?),
            Some(disc) => {
                let dims = (self.system.n_x, self.system.n_u, self.system.n_w);
                let gs = project_nodes(
                    |xi| {
                        let (a, b, d) = self.system.eval(xi);
                        // hold B and D through the same zero-order hold
                        let n_u = b.ncols();
                        let mut bd = DMatrix::zeros(b.nrows(), n_u + d.ncols());
                        bd.view_mut((0, 0), (b.nrows(), n_u)).copy_from(&b);
                        bd.view_mut((0, n_u), (d.nrows(), d.ncols())).copy_from(&d);
                        let (a_d, bd_d) =
                            discretize(&a, &bd, disc.dt, disc.method).expect("discretization");
                        let b_d = bd_d.columns(0, n_u).into_owned();
                        let d_d = bd_d.columns(n_u, d.ncols()).into_owned();
                        (a_d, b_d, d_d)
                    },
                    dims,
                    basis,
                    rule,
                );
                Ok(gs)
            }
        }
    }

    /// Coefficients of the per-step disturbance ω(ξ); zero when the
    /// scenario has none.
    pub fn disturbance_hat(&self, basis: &OrthonormalBasis, rule: &QuadratureRule) -> CoeffVector {
        match &self.disturbance_poly {
            None => CoeffVector::zeros(self.system.n_w, basis.len()),
            Some(poly) => expand_function(
                |xi| {
                    let m = poly.eval(xi);
                    m.column(0).into_owned()
                },
                basis,
                rule,
            ),
        }
    }
}

// ---------------------------------------------------------------------------
// obstacle avoidance
// ---------------------------------------------------------------------------

/// Shipped two-component correlated bimodal mixture in d = 2.
pub fn default_obstacle_mixture() -> GaussianMixture {
    GaussianMixture::new(vec![
        (
            0.5,
            DVector::from_vec(vec![-1.0, -1.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]) * 0.5,
        ),
        (
            0.5,
            DVector::from_vec(vec![0.75, 0.75]),
            DMatrix::from_row_slice(2, 2, &[0.8, -0.3, -0.3, 0.8]) * 0.5,
        ),
    ])
    .expect("valid default mixture")
}

/// Offset c of the forbidden half-space {x : x₁ + x₂ < c}; chosen so the
/// unconstrained regulation optimum from x₀ = (20, 10) crosses it within
/// the 4-step horizon.
pub const OBSTACLE_HALFSPACE_OFFSET: f64 = 28.0;

/// x⁺ = [0.9+ρ₁ξ₁, 0.1; 0.1, 0.85]x + [0.25−ρ₁ξ₁; 0.75+ρ₂ξ₂]u.
pub fn obstacle_system(rho1: f64, rho2: f64) -> StochasticLti {
    let mut a = PolyMatrix::zeros(2, 2);
    a.set_term(0, 0, MultiIndex::zeros(2), 0.9);
    a.set_term(0, 0, MultiIndex(vec![1, 0]), rho1);
    a.set_term(0, 1, MultiIndex::zeros(2), 0.1);
    a.set_term(1, 0, MultiIndex::zeros(2), 0.1);
    a.set_term(1, 1, MultiIndex::zeros(2), 0.85);
    let mut b = PolyMatrix::zeros(2, 1);
    b.set_term(0, 0, MultiIndex::zeros(2), 0.25);
    b.set_term(0, 0, MultiIndex(vec![1, 0]), -rho1);
    b.set_term(1, 0, MultiIndex::zeros(2), 0.75);
    b.set_term(1, 0, MultiIndex(vec![0, 1]), rho2);
    StochasticLti {
        n_x: 2,
        n_u: 1,
        n_w: 1,
        param_dim: 2,
        a,
        b,
        d: PolyMatrix::zeros(2, 1),
    }
}

/// Regulation from x₀ = (20, 10) over 4 steps with one chance-constrained
/// forbidden half-space; `uncertain = false` zeroes ρ₁, ρ₂.
pub fn scenario_obstacle(uncertain: bool) -> Scenario {
    let (rho1, rho2) = if uncertain { (0.001, 0.05) } else { (0.0, 0.0) };
    let system = obstacle_system(rho1, rho2);
    let constraint = AffineConstraint::new(
        DVector::from_vec(vec![-1.0, -1.0]),
        OBSTACLE_HALFSPACE_OFFSET,
        0.99,
        vec![1, 2, 3, 4],
    )
    .expect("valid obstacle constraint");
    let problem = MpcProblem::time_invariant(
        4,
        DMatrix::from_diagonal(&DVector::from_vec(vec![100.0, 100.0])),
        DMatrix::from_element(1, 1, 1.0),
        DVector::from_element(1, -0.5),
        DVector::from_element(1, 0.5),
        vec![constraint],
        CoeffVector::deterministic(&DVector::from_vec(vec![20.0, 10.0]), 1),
    );
    Scenario {
        name: if uncertain {
            "obstacle".into()
        } else {
            "obstacle-deterministic".into()
        },
        system,
        mixture: default_obstacle_mixture(),
        problem,
        discretization: None,
        disturbance_poly: None,
        sim_steps: 4,
    }
}

// ---------------------------------------------------------------------------
// vehicle path following
// ---------------------------------------------------------------------------

pub const VEHICLE_DT: f64 = 0.05;
/// Nominal cornering stiffness, 967 N/deg expressed in N/rad.
pub fn vehicle_nominal_stiffness() -> f64 {
    967.0 * 180.0 / PI
}

/// Mixture over relative stiffness deviations (δ_f, δ_r): the true values
/// are C = nominal·(1 + δ). Two components at ±4% with 3% in-component
/// spread and positive correlation.
pub fn vehicle_mixture() -> GaussianMixture {
    let sigma = 0.03;
    let corr = 0.6;
    let cov = DMatrix::from_row_slice(
        2,
        2,
        &[
            sigma * sigma,
            corr * sigma * sigma,
            corr * sigma * sigma,
            sigma * sigma,
        ],
    );
    GaussianMixture::new(vec![
        (0.5, DVector::from_vec(vec![0.04, 0.04]), cov.clone()),
        (0.5, DVector::from_vec(vec![-0.04, -0.04]), cov),
    ])
    .expect("valid vehicle mixture")
}

/// Numeric continuous-time matrices at given stiffness values.
fn vehicle_matrices(cf: f64, cr: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let vx = 20.0;
    let m = 1270.0;
    let a_len = 1.015;
    let b_len = 1.895;
    let izz = 1536.7;
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[
            0.0,
            1.0,
            0.0,
            0.0,
            0.0,
            -(2.0 * cf + 2.0 * cr) / (m * vx),
            (2.0 * cf + 2.0 * cr) / m,
            -(2.0 * a_len * cf + 2.0 * b_len * cr) / (m * vx),
            0.0,
            0.0,
            0.0,
            1.0,
            0.0,
            -(2.0 * a_len * cf + 2.0 * b_len * cr) / (izz * vx),
            (2.0 * a_len * cf - 2.0 * b_len * cr) / izz,
            -(2.0 * a_len * a_len * cf + 2.0 * b_len * b_len * cr) / (izz * vx),
        ],
    );
    let b = DMatrix::from_row_slice(
        4,
        2,
        &[
            0.0,
            0.0,
            2.0 * cf / m,
            (2.0 * a_len * cf - 2.0 * b_len * cr) / (m * vx) - vx,
            0.0,
            0.0,
            2.0 * a_len * cf / izz,
            (2.0 * a_len * a_len * cf + 2.0 * b_len * b_len * cr) / (izz * vx),
        ],
    );
    (a, b)
}

/// Continuous-time lateral dynamics with entries affine in the stiffness
/// deviations ξ = (δ_f, δ_r).
pub fn vehicle_continuous() -> StochasticLti {
    let nom = vehicle_nominal_stiffness();
    let (a0, b0) = vehicle_matrices(nom, nom);
    // entries are affine in (C_f, C_r), so finite differences are exact
    let (af, bf) = vehicle_matrices(2.0 * nom, nom);
    let (ar, br) = vehicle_matrices(nom, 2.0 * nom);
    let a1 = &af - &a0;
    let b1 = &bf - &b0;
    let a2 = &ar - &a0;
    let b2 = &br - &b0;
    let mut a = PolyMatrix::zeros(4, 4);
    let mut b = PolyMatrix::zeros(4, 2);
    let e1 = MultiIndex(vec![1, 0]);
    let e2 = MultiIndex(vec![0, 1]);
    for r in 0..4 {
        for c in 0..4 {
            a.set_term(r, c, MultiIndex::zeros(2), a0[(r, c)]);
            a.set_term(r, c, e1.clone(), a1[(r, c)]);
            a.set_term(r, c, e2.clone(), a2[(r, c)]);
        }
        for c in 0..2 {
            b.set_term(r, c, MultiIndex::zeros(2), b0[(r, c)]);
            b.set_term(r, c, e1.clone(), b1[(r, c)]);
            b.set_term(r, c, e2.clone(), b2[(r, c)]);
        }
    }
    StochasticLti {
        n_x: 4,
        n_u: 2,
        n_w: 1,
        param_dim: 2,
        a,
        b,
        d: PolyMatrix::zeros(4, 1),
    }
}

/// Lateral-error regulation from e₁(0) = 1 m along a straight path, with
/// state box chance constraints at 99% confidence. The second input channel
/// (desired yaw rate) is pinned to zero through its bounds.
pub fn scenario_vehicle() -> Scenario {
    let system = vehicle_continuous();
    let horizon = 20;
    let sim_steps = 60;
    let beta = 0.99;
    let boxes: [(usize, f64); 4] = [(0, 1.0), (1, 10.0), (2, 28.65), (3, 572.96)];
    let mut constraints = Vec::new();
    for (idx, bound) in boxes {
        let mut up = DVector::zeros(4);
        up[idx] = 1.0;
        constraints.push(
            AffineConstraint::new(up.clone(), -bound, beta, (1..=horizon).collect())
                .expect("vehicle upper bound"),
        );
        constraints.push(
            AffineConstraint::new(-up, -bound, beta, (1..=horizon).collect())
                .expect("vehicle lower bound"),
        );
    }
    let tracking = Tracking {
        c: DMatrix::from_row_slice(1, 4, &[1.0, 0.0, 0.0, 0.0]),
        s: DMatrix::from_element(1, 1, 100.0),
        y_ref: vec![DVector::zeros(1); sim_steps + horizon],
    };
    let mut problem = MpcProblem::time_invariant(
        horizon,
        DMatrix::from_diagonal(&DVector::from_vec(vec![7000.0, 1.0, 20000.0, 1.0])),
        DMatrix::identity(2, 2),
        DVector::from_vec(vec![-1.0, 0.0]),
        DVector::from_vec(vec![1.0, 0.0]),
        constraints,
        CoeffVector::deterministic(&DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]), 1),
    );
    problem.tracking = Some(tracking);
    Scenario {
        name: "vehicle".into(),
        system,
        mixture: vehicle_mixture(),
        problem,
        discretization: Some(Discretization {
            method: DiscMethod::ZeroOrderHold,
            dt: VEHICLE_DT,
        }),
        disturbance_poly: None,
        sim_steps,
    }
}

// ---------------------------------------------------------------------------
// quadrotor reference tracking
// ---------------------------------------------------------------------------

/// Discrete or continuous quadrotor model matrices, loaded from a config
/// file in normal operation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadrotorModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub dt: f64,
    pub u_eq: f64,
}

/// Small-angle hover linearization of a plus-configuration quadrotor with
/// rotor-speed deviations as inputs, scaled so hover sits at 192.8 rad/s
/// per rotor. State: positions, velocities, attitude angles, body rates.
pub fn default_quadrotor_model() -> QuadrotorModel {
    let mass = 0.5;
    let grav = 9.81;
    let ixx = 5e-3;
    let iyy = 5e-3;
    let izz = 9e-3;
    let arm = 0.2;
    let omega_eq = 192.8;
    let k_f = mass * grav / (4.0 * omega_eq * omega_eq);
    let k_m = 7.5e-7;
    let thrust_gain = 2.0 * k_f * omega_eq; // dT_i/dΩ_i at hover
    let yaw_gain = 2.0 * k_m * omega_eq;
    let n = 12;
    let mut a = vec![vec![0.0; n]; n];
    // position derivatives
    for i in 0..3 {
        a[i][3 + i] = 1.0;
    }
    // translational accelerations from tilt
    a[3][7] = grav; // ẍ = g·θ
    a[4][6] = -grav; // ÿ = −g·φ
    // attitude kinematics
    for i in 0..3 {
        a[6 + i][9 + i] = 1.0;
    }
    let mut b = vec![vec![0.0; 4]; n];
    // vertical acceleration from collective thrust
    for j in 0..4 {
        b[5][j] = thrust_gain / mass;
    }
    // roll from rotors 2/4 (±y arms), pitch from rotors 1/3 (±x arms)
    b[9][3] = arm * thrust_gain / ixx;
    b[9][1] = -arm * thrust_gain / ixx;
    b[10][0] = arm * thrust_gain / iyy;
    b[10][2] = -arm * thrust_gain / iyy;
    // yaw from alternating rotor drag torques
    for (j, sign) in [(0, 1.0), (1, -1.0), (2, 1.0), (3, -1.0)] {
        b[11][j] = sign * yaw_gain / izz;
    }
    // additive disturbance on the Cartesian positions
    let mut d = vec![vec![0.0; 3]; n];
    for i in 0..3 {
        d[i][i] = 1.0;
    }
    QuadrotorModel {
        a,
        b,
        d,
        dt: 0.1,
        u_eq: omega_eq,
    }
}

/// Loads quadrotor model matrices from a TOML file.
pub fn load_quadrotor_model(path: &std::path::Path) -> Result<QuadrotorModel, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|_| ScenarioError::MissingModelConfig {
        path: path.display().to_string(),
    })?;
    toml::from_str(&text).map_err(|e| ScenarioError::ModelParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadReference {
    /// 10 m steps in x and y at 10 m height.
    Step,
    /// x = 2cos(0.2t), y = 2sin(0.2t), z = 0.2t.
    Helix,
}

pub fn quad_reference_at(reference: QuadReference, t: f64) -> DVector<f64> {
    match reference {
        QuadReference::Step => DVector::from_vec(vec![10.0, 10.0, 10.0]),
        QuadReference::Helix => DVector::from_vec(vec![
            2.0 * (0.2 * t).cos(),
            2.0 * (0.2 * t).sin(),
            0.2 * t,
        ]),
    }
}

fn model_to_poly(
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
    name: &str,
    param_dim: usize,
) -> Result<PolyMatrix, ScenarioError> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(ScenarioError::BadModelShape {
            name: name.into(),
            rows: nrows,
            cols: ncols,
            got_rows: rows.len(),
            got_cols: rows.first().map_or(0, |r| r.len()),
        });
    }
    let mut m = PolyMatrix::zeros(nrows, ncols);
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            if v != 0.0 {
                m.set_term(r, c, MultiIndex::zeros(param_dim), v);
            }
        }
    }
    Ok(m)
}

/// Position tracking for a supplied quadrotor model with chance-constrained
/// attitude bounds; the disturbance ω(ξ) maps the shipped d=2 mixture onto
/// the three position channels.
pub fn scenario_quadrotor(
    model: &QuadrotorModel,
    reference: QuadReference,
    sim_steps: usize,
) -> Result<Scenario, ScenarioError> {
    let n = 12;
    let system = StochasticLti {
        n_x: n,
        n_u: 4,
        n_w: 3,
        param_dim: 2,
        a: model_to_poly(&model.a, n, n, "a", 2)?,
        b: model_to_poly(&model.b, n, 4, "b", 2)?,
        d: model_to_poly(&model.d, n, 3, "d", 2)?,
    };
    let horizon = 15;
    let beta = 0.99;
    let attitude_bound = 5.0 * PI / 180.0;
    let mut constraints = Vec::new();
    for idx in [6usize, 7] {
        let mut up = DVector::zeros(n);
        up[idx] = 1.0;
        constraints.push(
            AffineConstraint::new(up.clone(), -attitude_bound, beta, (1..=horizon).collect())
                .expect("attitude upper bound"),
        );
        constraints.push(
            AffineConstraint::new(-up, -attitude_bound, beta, (1..=horizon).collect())
                .expect("attitude lower bound"),
        );
    }
    let mut c_pos = DMatrix::zeros(3, n);
    for i in 0..3 {
        c_pos[(i, i)] = 1.0;
    }
    let y_ref: Vec<DVector<f64>> = (0..sim_steps + horizon)
        .map(|k| quad_reference_at(reference, (k + 1) as f64 * model.dt))
        .collect();
    let tracking = Tracking {
        c: c_pos,
        s: DMatrix::identity(3, 3) * 100.0,
        y_ref,
    };
    let mut q_diag = DVector::from_element(n, 1.0);
    for i in 9..12 {
        q_diag[i] = 0.1;
    }
    let mut problem = MpcProblem::time_invariant(
        horizon,
        DMatrix::from_diagonal(&q_diag),
        DMatrix::identity(4, 4) * 0.01,
        DVector::from_element(4, -60.0),
        DVector::from_element(4, 60.0),
        constraints,
        CoeffVector::deterministic(&start_state(reference), 1),
    );
    problem.tracking = Some(tracking);
    // ω(ξ) = 0.05·(ξ1, ξ2, (ξ1+ξ2)/2)
    let mut dist = PolyMatrix::zeros(3, 1);
    dist.set_term(0, 0, MultiIndex(vec![1, 0]), 0.05);
    dist.set_term(1, 0, MultiIndex(vec![0, 1]), 0.05);
    dist.set_term(2, 0, MultiIndex(vec![1, 0]), 0.025);
    dist.set_term(2, 0, MultiIndex(vec![0, 1]), 0.025);
    Ok(Scenario {
        name: "quadrotor".into(),
        system,
        mixture: default_obstacle_mixture(),
        problem,
        discretization: Some(Discretization {
            method: DiscMethod::ZeroOrderHold,
            dt: model.dt,
        }),
        disturbance_poly: Some(dist),
        sim_steps,
    })
}

fn start_state(reference: QuadReference) -> DVector<f64> {
    let mut x0 = DVector::zeros(12);
    match reference {
        QuadReference::Step => {
            x0[2] = 10.0; // hovering at the step altitude, offset in x/y
        }
        QuadReference::Helix => {
            x0[0] = 2.0;
        }
    }
    x0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn model_file_round_trip_and_error_paths() {
        let dir = std::env::temp_dir().join("sgmpc-model-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.toml");
        let model = default_quadrotor_model();
        std::fs::write(&path, toml::to_string(&model).unwrap()).unwrap();
        let loaded = load_quadrotor_model(&path).unwrap();
        assert_eq!(loaded.a, model.a);
        assert_eq!(loaded.u_eq, model.u_eq);
        assert!(matches!(
            load_quadrotor_model(std::path::Path::new("/nonexistent/model.toml")),
            Err(ScenarioError::MissingModelConfig { .. })
        ));
        std::fs::write(&path, "a = \"not a matrix\"").unwrap();
        assert!(matches!(
            load_quadrotor_model(&path),
            Err(ScenarioError::ModelParse { .. })
        ));
    }

    #[test]
    fn default_mixture_shape() {
        let gm = default_obstacle_mixture();
        assert_eq!(gm.dim(), 2);
        let mean1 = gm.raw_moment(&MultiIndex(vec![1, 0]));
        assert_relative_eq!(mean1, 0.5 * (-1.0) + 0.5 * 0.75, epsilon = 1e-12);
    }

    #[test]
    fn zoh_of_integrator() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let (ad, bd) = discretize(&a, &b, 0.3, DiscMethod::ZeroOrderHold).unwrap();
        assert_relative_eq!((ad - DMatrix::identity(2, 2)).amax(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(bd[(0, 0)], 0.3, epsilon = 1e-13);
        assert_relative_eq!(bd[(1, 0)], 0.6, epsilon = 1e-13);
    }

    #[test]
    fn zoh_scalar_closed_form() {
        let a = DMatrix::from_element(1, 1, -1.7);
        let b = DMatrix::from_element(1, 1, 2.0);
        let dt = 0.4;
        let (ad, bd) = discretize(&a, &b, dt, DiscMethod::ZeroOrderHold).unwrap();
        let exact = (-1.7f64 * dt).exp();
        assert_relative_eq!(ad[(0, 0)], exact, epsilon = 1e-12);
        let bd_exact = (exact - 1.0) / -1.7 * 2.0;
        assert_relative_eq!(bd[(0, 0)], bd_exact, epsilon = 1e-12);
    }

    #[test]
    fn zoh_large_dt_scaling() {
        // requires several squarings
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 6.0, -6.0, 0.0]);
        let b = DMatrix::zeros(2, 1);
        let (ad, _) = discretize(&a, &b, 1.0, DiscMethod::ZeroOrderHold).unwrap();
        // rotation by 6 rad
        assert_relative_eq!(ad[(0, 0)], 6.0f64.cos(), epsilon = 1e-10);
        assert_relative_eq!(ad[(0, 1)], 6.0f64.sin(), epsilon = 1e-10);
    }

    #[test]
    fn euler_matches_definition() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.0, -0.5]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let (ad, bd) = discretize(&a, &b, 0.1, DiscMethod::ForwardEuler).unwrap();
        assert_relative_eq!(ad[(0, 1)], 0.1, epsilon = 1e-15);
        assert_relative_eq!(ad[(0, 0)], 1.0, epsilon = 1e-15);
        assert_relative_eq!(bd[(1, 0)], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn euler_vs_zoh_vehicle_spectral_gap() {
        let nom = vehicle_nominal_stiffness();
        let (a, b) = vehicle_matrices(nom, nom);
        let (az, _) = discretize(&a, &b, VEHICLE_DT, DiscMethod::ZeroOrderHold).unwrap();
        let (ae, _) = discretize(&a, &b, VEHICLE_DT, DiscMethod::ForwardEuler).unwrap();
        let rho = |m: &DMatrix<f64>| {
            m.clone()
                .complex_eigenvalues()
                .iter()
                .map(|c| c.norm())
                .fold(0.0f64, f64::max)
        };
        // the fastest vehicle mode has |λ|·dt close to 1, so forward Euler
        // distorts the spectral radius at the 1e-1 scale; measured 0.107
        let gap = (rho(&az) - rho(&ae)).abs();
        assert!(gap <= 0.15, "spectral radius gap {gap}");
    }

    #[test]
    fn obstacle_system_matches_displayed_matrices() {
        let sys = obstacle_system(0.001, 0.05);
        let xi = DVector::from_vec(vec![0.3, -0.2]);
        let (a, b, _) = sys.eval(&xi);
        assert_relative_eq!(a[(0, 0)], 0.9 + 0.001 * 0.3, epsilon = 1e-15);
        assert_relative_eq!(a[(1, 1)], 0.85, epsilon = 1e-15);
        assert_relative_eq!(b[(0, 0)], 0.25 - 0.001 * 0.3, epsilon = 1e-15);
        assert_relative_eq!(b[(1, 0)], 0.75 + 0.05 * (-0.2), epsilon = 1e-15);
    }

    #[test]
    fn obstacle_scenario_pinned_values() {
        let s = scenario_obstacle(true);
        assert_eq!(s.problem.horizon, 4);
        assert_relative_eq!(s.problem.q[0][(0, 0)], 100.0);
        assert_relative_eq!(s.problem.r[0][(0, 0)], 1.0);
        assert_relative_eq!(s.problem.u_max[0], 0.5);
        assert_relative_eq!(s.problem.x_init.block(0)[0], 20.0);
        assert_relative_eq!(s.problem.constraints[0].beta, 0.99);
        let det = scenario_obstacle(false);
        let xi = DVector::from_vec(vec![5.0, -3.0]);
        let (a_u, _, _) = det.system.eval(&xi);
        assert_relative_eq!(a_u[(0, 0)], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn vehicle_entries_affine_in_stiffness() {
        let sys = vehicle_continuous();
        let nom = vehicle_nominal_stiffness();
        let xi = DVector::from_vec(vec![0.08, -0.05]);
        let (a_poly, b_poly, _) = sys.eval(&xi);
        let (a_num, b_num) = vehicle_matrices(nom * 1.08, nom * 0.95);
        assert!((a_poly - a_num).amax() <= 1e-9);
        assert!((b_poly - b_num).amax() <= 1e-9);
    }

    #[test]
    fn vehicle_scenario_pinned_values() {
        let s = scenario_vehicle();
        assert_relative_eq!(s.problem.q[0][(2, 2)], 20000.0);
        assert_relative_eq!(s.problem.q[0][(0, 0)], 7000.0);
        assert_relative_eq!(s.problem.x_init.block(0)[0], 1.0);
        let disc = s.discretization.unwrap();
        assert_relative_eq!(disc.dt, 0.05);
        assert_eq!(s.problem.constraints.len(), 8);
        let track = s.problem.tracking.as_ref().unwrap();
        assert_relative_eq!(track.s[(0, 0)], 100.0);
        assert_relative_eq!(track.y_ref[0][0], 0.0);
        // stiffness conversion: 967 N/deg in N/rad
        assert_relative_eq!(
            vehicle_nominal_stiffness(),
            55404.0,
            max_relative = 1e-4
        );
    }

    #[test]
    fn quadrotor_hover_balance() {
        let m = default_quadrotor_model();
        assert_relative_eq!(m.u_eq, 192.8);
        // at hover the modeled thrust equals the weight
        let mass = 0.5;
        let grav = 9.81;
        let k_f = mass * grav / (4.0 * m.u_eq * m.u_eq);
        assert_relative_eq!(4.0 * k_f * m.u_eq * m.u_eq, mass * grav, epsilon = 1e-12);
        // tilt couples into translational acceleration
        assert_relative_eq!(m.a[3][7], grav);
        assert_relative_eq!(m.a[4][6], -grav);
    }

    #[test]
    fn quadrotor_scenario_builds() {
        let model = default_quadrotor_model();
        let s = scenario_quadrotor(&model, QuadReference::Helix, 40).unwrap();
        assert_eq!(s.system.n_x, 12);
        assert_eq!(s.system.n_w, 3);
        assert_eq!(s.problem.constraints.len(), 4);
        assert_relative_eq!(s.problem.constraints[0].b, -5.0 * PI / 180.0);
        let track = s.problem.tracking.as_ref().unwrap();
        // helix reference at t = 0 starts at (2, 0, 0)
        let r0 = quad_reference_at(QuadReference::Helix, 0.0);
        assert_relative_eq!(r0[0], 2.0);
        assert_relative_eq!(r0[1], 0.0);
        assert!(track.y_ref.len() >= 40);
    }

    #[test]
    fn quadrotor_bad_shape_rejected() {
        let mut model = default_quadrotor_model();
        model.a.pop();
        assert!(matches!(
            scenario_quadrotor(&model, QuadReference::Step, 10),
            Err(ScenarioError::BadModelShape { .. })
        ));
    }

    #[test]
    fn problem_for_relifts_initial_state() {
        let s = scenario_obstacle(true);
        let p = s.problem_for(6);
        assert_eq!(p.x_init.coeffs.len(), 12);
        assert_relative_eq!(p.x_init.block(0)[0], 20.0);
        assert_relative_eq!(p.x_init.block(3).norm(), 0.0);
    }
}

