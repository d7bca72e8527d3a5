//! Chance-constrained stochastic MPC for linear systems whose parameters
//! follow a non-Gaussian correlated (Gaussian-mixture) distribution.
//!
//! The pipeline:
//!
//! 1. [`mixture`] — Gaussian-mixture parameter distribution with an exact
//!    analytic raw-moment oracle.
//! 2. [`basis`] — orthonormal polynomial basis under the mixture measure,
//!    built by modified Gram–Schmidt over the moment Gram matrix.
//! 3. [`quad`] — optimization-based quadrature: nonlinear least-squares
//!    exactness conditions solved by block coordinate descent, with
//!    weighted-clustering node reduction.
//! 4. [`galerkin`] — stochastic Galerkin projection onto a lifted
//!    deterministic system over expansion coefficients.
//! 5. [`mpc`] — deterministic surrogate program: lifted quadratic cost,
//!    mean-variance chance-constraint reformulation, augmented-Lagrangian
//!    solver; open-loop and receding-horizon operation.
//! 6. [`scenario`] / [`mc`] — benchmark scenarios, Monte Carlo oracle,
//!    and the timing comparison harness.
//!
//! See the crate `examples/` directory for one runnable example per major
//! capability, or the `sgmpc` binary for the end-to-end CLI.

pub mod basis;
pub mod cli;
pub mod config;
pub mod galerkin;
pub mod mc;
pub mod mixture;
pub mod mpc;
pub mod quad;
pub mod scenario;

pub use basis::{gram_schmidt, MonomialOrder, OrthonormalBasis};
pub use galerkin::{CoeffVector, GalerkinSystem, StochasticLti};
pub use mc::{compare_pdf, mc_mpc, mc_propagate};
pub use mixture::{GaussianMixture, MomentOracle, MultiIndex, SampleBatch};
pub use mpc::{
    receding_horizon, solve_open_loop, AffineConstraint, MpcProblem, MpcSolution, SolveStatus,
    SolverConfig,
};
pub use quad::{generate, QuadConfig, QuadratureRule};
pub use scenario::{
    default_obstacle_mixture, default_quadrotor_model, scenario_obstacle, scenario_quadrotor,
    scenario_vehicle, QuadReference, Scenario,
};
