//! Deterministic surrogate MPC over the lifted Galerkin system: lifted
//! quadratic cost, mean-variance chance-constraint reformulation, box input
//! bounds, and an augmented-Lagrangian solver with projected spectral
//! gradient inner iterations. Supports open-loop and receding-horizon use.

use crate::galerkin::{propagate, CoeffVector, GalerkinSystem};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("confidence level {beta} outside (0.5, 1)")]
    InvalidConfidence { beta: f64 },
    #[error("constraint normal vector is zero")]
    ZeroConstraintNormal,
    #[error("infeasible at receding-horizon step {step}: violation {violation:.3e}")]
    InfeasibleAtStep { step: usize, violation: f64 },
    #[error(transparent)]
    Galerkin(#[from] crate::galerkin::GalerkinError),
}

/// Half-space chance constraint Pr[aᵀx + b ≤ 0] ≥ β at the listed times.
#[derive(Debug, Clone)]
pub struct AffineConstraint {
    pub a: DVector<f64>,
    pub b: f64,
    pub beta: f64,
    /// Time indices (1-based within the horizon) at which to enforce.
    pub active_times: Vec<usize>,
}

impl AffineConstraint {
    pub fn new(
        a: DVector<f64>,
        b: f64,
        beta: f64,
        active_times: Vec<usize>,
    ) -> Result<Self, MpcError> {
        if !(0.5..1.0).contains(&beta) || beta == 0.5 {
            return Err(MpcError::InvalidConfidence { beta });
        }
        if a.norm() == 0.0 {
            return Err(MpcError::ZeroConstraintNormal);
        }
        Ok(AffineConstraint {
            a,
            b,
            beta,
            active_times,
        })
    }

    /// κ_{1−β} = √(β/(1−β)), the Cantelli multiplier.
    pub fn kappa(&self) -> f64 {
        (self.beta / (1.0 - self.beta)).sqrt()
    }
}

/// Output-tracking term (C, per-step references, output weight S).
#[derive(Debug, Clone)]
pub struct Tracking {
    pub c: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// References for t = 1..T.
    pub y_ref: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub horizon: usize,
    /// Per-step state weights Q_1..Q_T (symmetric positive definite).
    pub q: Vec<DMatrix<f64>>,
    /// Per-step input weights R_1..R_T.
    pub r: Vec<DMatrix<f64>>,
    pub tracking: Option<Tracking>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub constraints: Vec<AffineConstraint>,
    pub x_init: CoeffVector,
}

impl MpcProblem {
    /// Time-invariant weights replicated over the horizon.
    pub fn time_invariant(
        horizon: usize,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        constraints: Vec<AffineConstraint>,
        x_init: CoeffVector,
    ) -> Self {
        MpcProblem {
            horizon,
            q: vec![q; horizon],
            r: vec![r; horizon],
            tracking: None,
            u_min,
            u_max,
            constraints,
            x_init,
        }
    }

    pub fn n_u(&self) -> usize {
        self.u_min.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIters,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SolverStats {
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub max_violation: f64,
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// T × n_u optimized deterministic inputs.
    pub u_star: DMatrix<f64>,
    pub x_traj: Vec<CoeffVector>,
    pub objective: f64,
    pub stats: SolverStats,
    pub status: SolveStatus,
}

/// Q̂ = lift of a base weight through the Gramian: block (k, j) = v_kj·Q,
/// so that x̂ᵀQ̂x̂ = E[xᵀQx] for states represented exactly in the basis.
pub fn lift_cost(base: &DMatrix<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
    v.kronecker(base)
}

const EPS_SMOOTH: f64 = 1e-12;

/// Mean-variance reformulation of the chance constraint at one lifted
/// state: m = g_1 + κ·√(Σ_{k≥2} g_k² + ε) with g_k = aᵀc_k + b·δ_{1k}.
/// The solver imposes m ≤ 0, which guarantees Pr[g ≤ 0] ≥ β by the
/// one-sided Chebyshev bound.
pub fn chance_margin(c: &AffineConstraint, x_hat: &CoeffVector) -> f64 {
    let mut var = 0.0;
    for k in 1..x_hat.n_p {
        let gk = c.a.dot(&x_hat.block(k));
        var += gk * gk;
    }
    let g1 = c.a.dot(&x_hat.block(0)) + c.b;
    g1 + c.kappa() * (var + EPS_SMOOTH).sqrt()
}

// ---------------------------------------------------------------------------
// condensed problem
// ---------------------------------------------------------------------------

/// Smooth box-constrained program with inequality margins, consumed by the
/// augmented-Lagrangian backend. Implemented by the condensed Galerkin
/// surrogate here and by the sample-average Monte Carlo program in `mc`.
pub trait SmoothProgram {
    fn dim(&self) -> usize;
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);
    fn objective(&self, z: &DVector<f64>) -> f64;
    fn gradient(&self, z: &DVector<f64>) -> DVector<f64>;
    /// Constraint margins m_i(z); feasibility means m_i ≤ 0.
    fn margins(&self, z: &DVector<f64>) -> DVector<f64>;
    /// Rows = ∇m_i(z).
    fn margins_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64>;
}

struct MarginData {
    /// p[(k, ·)] = gradient of g_k w.r.t. the stacked decisions.
    p: DMatrix<f64>,
    /// q0[k] = affine part of g_k.
    q0: DVector<f64>,
    kappa: f64,
}

/// States eliminated by condensing: x̂_t = S_t z + b_t with z the stacked
/// deterministic inputs.
pub struct CondensedMpc {
    pub horizon: usize,
    pub n_u: usize,
    s: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
    h: DMatrix<f64>,
    g: DVector<f64>,
    c0: f64,
    margins: Vec<MarginData>,
    lo: DVector<f64>,
    hi: DVector<f64>,
    n_p: usize,
    n_x: usize,
}

impl CondensedMpc {
    pub fn build(
        prob: &MpcProblem,
        gs: &GalerkinSystem,
        disturbances: &[CoeffVector],
    ) -> Result<Self, MpcError> {
        let t_max = prob.horizon;
        let n_u = prob.n_u();
        if n_u != gs.n_u {
            return Err(MpcError::DimensionMismatch {
                expected: gs.n_u,
                got: n_u,
            });
        }
        if prob.x_init.coeffs.len() != gs.lifted_dim() {
            return Err(MpcError::DimensionMismatch {
                expected: gs.lifted_dim(),
                got: prob.x_init.coeffs.len(),
            });
        }
        if disturbances.len() < t_max {
            return Err(MpcError::DimensionMismatch {
                expected: t_max,
                got: disturbances.len(),
            });
        }
        let lifted = gs.lifted_dim();
        let nz = t_max * n_u;
        // embed deterministic input into block 1 of the lifted input
        let b_emb = gs.b_hat.columns(0, n_u).into_owned(); // B̂ · E
        // forward recursion for S_t and b_t
        let mut s_mats: Vec<DMatrix<f64>> = Vec::with_capacity(t_max);
        let mut b_vecs: Vec<DVector<f64>> = Vec::with_capacity(t_max);
        let mut s_prev = DMatrix::<f64>::zeros(lifted, nz);
        let mut b_prev = prob.x_init.coeffs.clone();
        for t in 0..t_max {
            let mut s_t = &gs.a_hat * &s_prev;
            s_t.view_mut((0, t * n_u), (lifted, n_u)).copy_from(&b_emb);
            let b_t = &gs.a_hat * &b_prev + &gs.d_hat * &disturbances[t].coeffs;
            s_mats.push(s_t.clone());
            b_vecs.push(b_t.clone());
            s_prev = s_t;
            b_prev = b_t;
        }
        // quadratic objective: J(z) = ½ zᵀHz + gᵀz + c0
        let v11 = gs.v[(0, 0)];
        let mut h = DMatrix::<f64>::zeros(nz, nz);
        let mut g = DVector::<f64>::zeros(nz);
        let mut c0 = 0.0;
        for t in 0..t_max {
            let q_hat = lift_cost(&prob.q[t], &gs.v);
            let qs = &q_hat * &s_mats[t];
            h += 2.0 * s_mats[t].transpose() * &qs;
            g += 2.0 * qs.transpose() * &b_vecs[t];
            c0 += (&q_hat * &b_vecs[t]).dot(&b_vecs[t]);
            // deterministic input: ûᵀR̂û = v11 · uᵀRu
            let r_scaled = &prob.r[t] * (2.0 * v11);
            for i in 0..n_u {
                for j in 0..n_u {
                    h[(t * n_u + i, t * n_u + j)] += r_scaled[(i, j)];
                }
            }
        }
        if let Some(track) = &prob.tracking {
            let n_y = track.c.nrows();
            let s_hat = lift_cost(&track.s, &gs.v);
            // block-diagonal lift of the output map: mode k of y = C · mode k of x
            let mut c_hat = DMatrix::<f64>::zeros(n_y * gs.n_p, lifted);
            for k in 0..gs.n_p {
                c_hat
                    .view_mut((k * n_y, k * gs.n_x), (n_y, gs.n_x))
                    .copy_from(&track.c);
            }
            for t in 0..t_max {
                let yref = CoeffVector::deterministic(&track.y_ref[t], gs.n_p);
                let cs = &c_hat * &s_mats[t];
                let resid0 = &c_hat * &b_vecs[t] - &yref.coeffs;
                let scs = &s_hat * &cs;
                h += 2.0 * cs.transpose() * &scs;
                g += 2.0 * cs.transpose() * (&s_hat * &resid0);
                c0 += (&s_hat * &resid0).dot(&resid0);
            }
        }
        // chance-margin data
        let mut margins = Vec::new();
        for cons in &prob.constraints {
            for &time in &cons.active_times {
                assert!(
                    (1..=t_max).contains(&time),
                    "constraint time {time} outside 1..={t_max}"
                );
                let s_t = &s_mats[time - 1];
                let b_t = &b_vecs[time - 1];
                let mut p = DMatrix::zeros(gs.n_p, nz);
                let mut q0 = DVector::zeros(gs.n_p);
                for k in 0..gs.n_p {
                    let rows = s_t.rows(k * gs.n_x, gs.n_x);
                    let mut prow = DVector::zeros(nz);
                    for c in 0..nz {
                        let mut acc = 0.0;
                        for r in 0..gs.n_x {
                            acc += cons.a[r] * rows[(r, c)];
                        }
                        prow[c] = acc;
                    }
                    p.row_mut(k).copy_from(&prow.transpose());
                    let mut acc = 0.0;
                    for r in 0..gs.n_x {
                        acc += cons.a[r] * b_t[k * gs.n_x + r];
                    }
                    q0[k] = acc + if k == 0 { cons.b } else { 0.0 };
                }
                margins.push(MarginData {
                    p,
                    q0,
                    kappa: cons.kappa(),
                });
            }
        }
        let mut lo = DVector::zeros(nz);
        let mut hi = DVector::zeros(nz);
        for t in 0..t_max {
            for i in 0..n_u {
                lo[t * n_u + i] = prob.u_min[i];
                hi[t * n_u + i] = prob.u_max[i];
            }
        }
        Ok(CondensedMpc {
            horizon: t_max,
            n_u,
            s: s_mats,
            b: b_vecs,
            h,
            g,
            c0,
            margins,
            lo,
            hi,
            n_p: gs.n_p,
            n_x: gs.n_x,
        })
    }

    /// x̂_t for t = 1..T at the given decisions.
    pub fn state_at(&self, z: &DVector<f64>, t: usize) -> CoeffVector {
        CoeffVector {
            coeffs: &self.s[t - 1] * z + &self.b[t - 1],
            base_dim: self.n_x,
            n_p: self.n_p,
        }
    }

    /// Unconstrained minimizer of the condensed quadratic (normal equations).
    pub fn unconstrained_minimizer(&self) -> DVector<f64> {
        self.h
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&(-&self.g)))
            .unwrap_or_else(|| {
                self.h
                    .clone()
                    .svd(true, true)
                    .solve(&(-&self.g), 1e-12)
                    .unwrap()
            })
    }
}

impl SmoothProgram for CondensedMpc {
    fn dim(&self) -> usize {
        self.horizon * self.n_u
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.h * z).dot(z) + self.g.dot(z) + self.c0
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.h * z + &self.g
    }

    fn margins(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.margins.len());
        for (i, m) in self.margins.iter().enumerate() {
            let gvals = &m.p * z + &m.q0;
            let var: f64 = (1..gvals.len()).map(|k| gvals[k] * gvals[k]).sum();
            out[i] = gvals[0] + m.kappa * (var + EPS_SMOOTH).sqrt();
        }
        out
    }

    fn margins_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let nz = self.dim();
        let mut jac = DMatrix::zeros(self.margins.len(), nz);
        for (i, m) in self.margins.iter().enumerate() {
            let gvals = &m.p * z + &m.q0;
            let var: f64 = (1..gvals.len()).map(|k| gvals[k] * gvals[k]).sum();
            let denom = (var + EPS_SMOOTH).sqrt();
            let mut row = m.p.row(0).transpose();
            for k in 1..gvals.len() {
                row += m.p.row(k).transpose() * (m.kappa * gvals[k] / denom);
            }
            jac.row_mut(i).copy_from(&row.transpose());
        }
        jac
    }
}

// ---------------------------------------------------------------------------
// augmented-Lagrangian solver
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub feas_tol: f64,
    /// Relative stationarity tolerance on the projected gradient.
    pub stat_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer: 40,
            max_inner: 3000,
            feas_tol: 1e-6,
            stat_tol: 1e-10,
            penalty_init: 10.0,
            penalty_growth: 10.0,
        }
    }
}

fn clamp(z: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(z.len(), |i, _| z[i].max(lo[i]).min(hi[i]))
}

/// Augmented-Lagrangian value and gradient for the inequality margins.
fn al_value_grad(
    prog: &dyn SmoothProgram,
    z: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
    with_grad: bool,
) -> (f64, Option<DVector<f64>>) {
    let m = prog.margins(z);
    let mut f = prog.objective(z);
    let mut active = Vec::new();
    for i in 0..m.len() {
        let shifted = lambda[i] / mu + m[i];
        if shifted > 0.0 {
            f += 0.5 * mu * shifted * shifted - lambda[i] * lambda[i] / (2.0 * mu);
            active.push((i, mu * shifted));
        } else {
            f -= lambda[i] * lambda[i] / (2.0 * mu);
        }
    }
    if !with_grad {
        return (f, None);
    }
    let mut grad = prog.gradient(z);
    if !active.is_empty() {
        let jac = prog.margins_jacobian(z);
        for (i, coef) in active {
            grad += jac.row(i).transpose() * coef;
        }
    }
    (f, Some(grad))
}

/// Projected spectral-gradient inner solve with nonmonotone line search.
fn spg_inner(
    prog: &dyn SmoothProgram,
    z0: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
    pg_tol: f64,
    max_iter: usize,
) -> (DVector<f64>, usize) {
    let (lo, hi) = prog.bounds();
    let mut z = clamp(z0, &lo, &hi);
    let (mut fv, grad) = al_value_grad(prog, &z, lambda, mu, true);
    let mut grad = grad.unwrap();
    let mut alpha = 1.0 / grad.norm().max(1.0);
    let mut history = vec![fv];
    let mut iters = 0usize;
    for _ in 0..max_iter {
        iters += 1;
        let trial = clamp(&(&z - &grad * alpha), &lo, &hi);
        let dir = &trial - &z;
        let pg = clamp(&(&z - &grad), &lo, &hi) - &z;
        if pg.amax() <= pg_tol {
            break;
        }
        if dir.amax() < 1e-16 {
            break;
        }
        let slope = grad.dot(&dir);
        let fmax = history.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut step = 1.0;
        let mut fnew;
        loop {
            let cand = &z + &dir * step;
            fnew = al_value_grad(prog, &cand, lambda, mu, false).0;
            if fnew <= fmax + 1e-4 * step * slope || step < 1e-14 {
                break;
            }
            step *= 0.5;
        }
        let znew = &z + &dir * step;
        let (_, gnew) = al_value_grad(prog, &znew, lambda, mu, true);
        let gnew = gnew.unwrap();
        let svec = &znew - &z;
        let yvec = &gnew - &grad;
        let sy = svec.dot(&yvec);
        alpha = if sy > 1e-16 {
            (svec.dot(&svec) / sy).clamp(1e-12, 1e10)
        } else {
            (alpha * 2.0).min(1e10)
        };
        z = znew;
        fv = fnew;
        grad = gnew;
        history.push(fv);
        if history.len() > 8 {
            history.remove(0);
        }
    }
    (z, iters)
}

/// Solves the program by an outer augmented-Lagrangian loop; monotone in
/// the accepted max violation.
pub fn solve_al(prog: &dyn SmoothProgram, cfg: &SolverConfig) -> (DVector<f64>, SolveStatus, SolverStats) {
    let start = std::time::Instant::now();
    let (lo, hi) = prog.bounds();
    let mut z = clamp(&DVector::zeros(prog.dim()), &lo, &hi);
    let n_cons = prog.margins(&z).len();
    let mut lambda = DVector::zeros(n_cons);
    let mut mu = cfg.penalty_init;
    let grad_scale = prog.gradient(&z).amax().max(1.0);
    let pg_final = cfg.stat_tol * grad_scale;
    let mut inner_total = 0usize;
    let mut best_viol = f64::INFINITY;
    let mut best_z = z.clone();
    let mut status = SolveStatus::MaxIters;
    let mut outer_done = 0usize;
    for outer in 0..cfg.max_outer {
        outer_done = outer + 1;
        let pg_tol = (pg_final * 10f64.powi((cfg.max_outer.min(6) as i32) - outer as i32))
            .max(pg_final);
        let (znew, iters) = spg_inner(prog, &z, &lambda, mu, pg_tol, cfg.max_inner);
        inner_total += iters;
        z = znew;
        let m = prog.margins(&z);
        let viol = m.iter().cloned().fold(0.0f64, |acc, v| acc.max(v.max(0.0)));
        if viol <= best_viol {
            best_viol = viol;
            best_z = z.clone();
        }
        if viol <= cfg.feas_tol && pg_tol <= pg_final * 1.000001 {
            status = SolveStatus::Optimal;
            break;
        }
        // multiplier update and penalty growth when infeasibility persists
        for i in 0..n_cons {
            lambda[i] = (lambda[i] + mu * m[i]).max(0.0);
        }
        if viol > 0.25 * best_viol && viol > cfg.feas_tol {
            mu = (mu * cfg.penalty_growth).min(1e12);
        }
    }
    let final_m = prog.margins(&best_z);
    let final_viol = final_m
        .iter()
        .cloned()
        .fold(0.0f64, |acc, v| acc.max(v.max(0.0)));
    if status != SolveStatus::Optimal {
        status = if final_viol > cfg.feas_tol {
            SolveStatus::Infeasible
        } else {
            SolveStatus::MaxIters
        };
    }
    let stats = SolverStats {
        outer_iterations: outer_done,
        inner_iterations: inner_total,
        max_violation: final_viol,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    (best_z, status, stats)
}

// ---------------------------------------------------------------------------
// public solve entry points
// ---------------------------------------------------------------------------

/// Solves the open-loop surrogate program (deterministic inputs over the
/// horizon, dynamics eliminated by condensing).
pub fn solve_open_loop(
    prob: &MpcProblem,
    gs: &GalerkinSystem,
    disturbances: &[CoeffVector],
    cfg: &SolverConfig,
) -> Result<MpcSolution, MpcError> {
    let condensed = CondensedMpc::build(prob, gs, disturbances)?;
    let (z, status, stats) = solve_al(&condensed, cfg);
    let n_u = prob.n_u();
    let mut u_star = DMatrix::zeros(prob.horizon, n_u);
    for t in 0..prob.horizon {
        for i in 0..n_u {
            u_star[(t, i)] = z[t * n_u + i];
        }
    }
    let u_hat: Vec<CoeffVector> = (0..prob.horizon)
        .map(|t| CoeffVector::deterministic(&u_star.row(t).transpose(), gs.n_p))
        .collect();
    let x_traj = propagate(gs, &prob.x_init, &u_hat, disturbances, prob.horizon)?;
    let objective = condensed.objective(&z);
    Ok(MpcSolution {
        u_star,
        x_traj,
        objective,
        stats,
        status,
    })
}

#[derive(Debug, Clone)]
pub struct ClosedLoopRecord {
    /// Lifted states x̂_0..x̂_steps.
    pub states: Vec<CoeffVector>,
    /// Applied inputs u_0..u_{steps−1}.
    pub inputs: Vec<DVector<f64>>,
    pub solutions: Vec<MpcSolution>,
}

/// Receding-horizon loop: at each step solve an open-loop problem of length
/// `replan_horizon` from the current lifted state, apply the first input,
/// and advance through the lifted dynamics.
pub fn receding_horizon<W>(
    prob: &MpcProblem,
    gs: &GalerkinSystem,
    steps: usize,
    replan_horizon: usize,
    cfg: &SolverConfig,
    disturbance_at: W,
) -> Result<ClosedLoopRecord, MpcError>
where
    W: Fn(usize) -> CoeffVector,
{
    assert!(replan_horizon >= 1 && replan_horizon <= prob.horizon);
    let mut record = ClosedLoopRecord {
        states: vec![prob.x_init.clone()],
        inputs: Vec::new(),
        solutions: Vec::new(),
    };
    let mut x = prob.x_init.clone();
    for step in 0..steps {
        let mut sub = prob.clone();
        sub.horizon = replan_horizon;
        sub.q = prob.q.iter().cycle().take(replan_horizon).cloned().collect();
        sub.r = prob.r.iter().cycle().take(replan_horizon).cloned().collect();
        if let Some(track) = &mut sub.tracking {
            track.y_ref = (0..replan_horizon)
                .map(|i| {
                    let idx = (step + 1 + i).min(track.y_ref.len()) - 1;
                    prob.tracking.as_ref().unwrap().y_ref[idx].clone()
                })
                .collect();
        }
        sub.constraints = prob
            .constraints
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.active_times = (1..=replan_horizon).collect();
                c
            })
            .collect();
        sub.x_init = x.clone();
        let w_hat: Vec<CoeffVector> = (0..replan_horizon)
            .map(|i| disturbance_at(step + i))
            .collect();
        let sol = solve_open_loop(&sub, gs, &w_hat, cfg)?;
        if sol.status == SolveStatus::Infeasible {
            return Err(MpcError::InfeasibleAtStep {
                step,
                violation: sol.stats.max_violation,
            });
        }
        let u0 = sol.u_star.row(0).transpose();
        let u_hat = CoeffVector::deterministic(&u0, gs.n_p);
        x = CoeffVector {
            coeffs: &gs.a_hat * &x.coeffs
                + &gs.b_hat * &u_hat.coeffs
                + &gs.d_hat * &disturbance_at(step).coeffs,
            base_dim: gs.n_x,
            n_p: gs.n_p,
        };
        record.states.push(x.clone());
        record.inputs.push(u0);
        record.solutions.push(sol);
    }
    Ok(record)
}
