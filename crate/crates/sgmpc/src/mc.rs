//! Monte Carlo reference implementations: per-sample propagation of the
//! true system, a sample-average-approximation MPC that shares the solver
//! backend with the lifted surrogate, empirical violation rates, and the
//! two-sample Kolmogorov-Smirnov distance.

use crate::galerkin::CoeffVector;
use crate::mixture::GaussianMixture;
use crate::mpc::{
    solve_al, AffineConstraint, MpcProblem, MpcSolution, SmoothProgram, SolverConfig, SolverStats,
};
use crate::scenario::{discretize, Scenario};
use nalgebra::{DMatrix, DVector};
use std::cell::RefCell;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum McError {
    #[error("need at least 2 samples, got {got}")]
    TooFewSamples { got: usize },
    #[error("input sequence has {got} steps, horizon needs {expected}")]
    ShortInputSequence { expected: usize, got: usize },
    #[error(transparent)]
    Scenario(#[from] crate::scenario::ScenarioError),
    #[error(transparent)]
    Mpc(#[from] crate::mpc::MpcError),
}

#[derive(Debug, Clone)]
pub struct McReport {
    pub n_samples: usize,
    /// mean[t], std[t] over samples for t = 0..T.
    pub mean: Vec<DVector<f64>>,
    pub std: Vec<DVector<f64>>,
    /// Worst per-time empirical violation fraction for each constraint.
    pub violation_rate: Vec<f64>,
    /// Filled by comparison drivers; empty otherwise.
    pub ks_distance: Vec<f64>,
    pub wall_time: f64,
}

/// Per-sample realization of the (discretized) dynamics.
struct SampleSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    /// D·ω(ξ) absorbed into a constant per-step offset.
    dw: DVector<f64>,
    x0: DVector<f64>,
}

fn realize_samples<F>(
    scenario: &Scenario,
    mixture: &GaussianMixture,
    x_init: F,
    n: usize,
    seed: u64,
) -> Result<Vec<SampleSystem>, McError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if n < 2 {
        return Err(McError::TooFewSamples { got: n });
    }
    let batch = mixture.sample(n, seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let xi = batch.points.row(i).transpose();
        let (a, b, d) = scenario.system.eval(&xi);
        let (a, b, d) = match scenario.discretization {
            None => (a, b, d),
            Some(disc) => {
                let n_u = b.ncols();
                let mut bd = DMatrix::zeros(b.nrows(), n_u + d.ncols());
                bd.view_mut((0, 0), (b.nrows(), n_u)).copy_from(&b);
                bd.view_mut((0, n_u), (d.nrows(), d.ncols())).copy_from(&d);
                let (a_d, bd_d) = discretize(&a, &bd, disc.dt, disc.method)?;
                (
                    a_d,
                    bd_d.columns(0, n_u).into_owned(),
                    bd_d.columns(n_u, d.ncols()).into_owned(),
                )
            }
        };
        let w = match &scenario.disturbance_poly {
            None => DVector::zeros(d.ncols()),
            Some(poly) => poly.eval(&xi).column(0).into_owned(),
        };
        out.push(SampleSystem {
            dw: &d * &w,
            a,
            b,
            x0: x_init(&xi),
        });
    }
    Ok(out)
}

fn simulate(sys: &SampleSystem, u: &[DVector<f64>], horizon: usize) -> Vec<DVector<f64>> {
    let mut states = Vec::with_capacity(horizon + 1);
    states.push(sys.x0.clone());
    let mut x = sys.x0.clone();
    for t in 0..horizon {
        x = &sys.a * &x + &sys.b * &u[t] + &sys.dw;
        states.push(x.clone());
    }
    states
}

/// Simulates the true system per sample under a fixed input sequence and
/// reports per-time statistics plus empirical chance-constraint violation
/// rates. Also returns the per-time sample matrices (n × n_x) for
/// distribution-level comparisons.
pub fn mc_propagate<F>(
    scenario: &Scenario,
    x_init: F,
    u: &[DVector<f64>],
    horizon: usize,
    constraints: &[AffineConstraint],
    n: usize,
    seed: u64,
) -> Result<(McReport, Vec<DMatrix<f64>>), McError>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    if u.len() < horizon {
        return Err(McError::ShortInputSequence {
            expected: horizon,
            got: u.len(),
        });
    }
    let start = std::time::Instant::now();
    let samples = realize_samples(scenario, &scenario.mixture, x_init, n, seed)?;
    let n_x = scenario.system.n_x;
    let mut per_time = vec![DMatrix::zeros(n, n_x); horizon + 1];
    for (i, s) in samples.iter().enumerate() {
        let states = simulate(s, u, horizon);
        for (t, x) in states.iter().enumerate() {
            per_time[t].row_mut(i).copy_from(&x.transpose());
        }
    }
    let mut mean = Vec::with_capacity(horizon + 1);
    let mut std = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let (m, s) = column_stats(&per_time[t]);
        mean.push(m);
        std.push(s);
    }
    let mut violation_rate = Vec::with_capacity(constraints.len());
    for cons in constraints {
        let mut worst = 0.0f64;
        for &t in &cons.active_times {
            if t > horizon {
                continue;
            }
            let mut count = 0usize;
            for i in 0..n {
                let x = per_time[t].row(i).transpose();
                if cons.a.dot(&x) + cons.b > 0.0 {
                    count += 1;
                }
            }
            worst = worst.max(count as f64 / n as f64);
        }
        violation_rate.push(worst);
    }
    let report = McReport {
        n_samples: n,
        mean,
        std,
        violation_rate,
        ks_distance: Vec::new(),
        wall_time: start.elapsed().as_secs_f64(),
    };
    Ok((report, per_time))
}

fn column_stats(m: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = m.nrows();
    let mean = DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n as f64);
    let std = DVector::from_fn(m.ncols(), |c, _| {
        let mu = mean[c];
        let var: f64 = m.column(c).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
        var.sqrt()
    });
    (mean, std)
}

// ---------------------------------------------------------------------------
// sample-average-approximation MPC
// ---------------------------------------------------------------------------

/// The SAA program: objective is the sample mean of the quadratic cost,
/// chance margins are sample mean + κ·(sample std). Every evaluation
/// re-simulates each realization, which is what makes this the expensive
/// baseline the surrogate is measured against.
struct SaaProgram<'a> {
    samples: Vec<SampleSystem>,
    prob: &'a MpcProblem,
    lo: DVector<f64>,
    hi: DVector<f64>,
    /// (constraint index, time) pairs in margin order.
    margin_index: Vec<(usize, usize)>,
    state_cache: RefCell<Option<(DVector<f64>, Vec<Vec<DVector<f64>>>)>>,
}

const EPS_SMOOTH: f64 = 1e-12;

impl<'a> SaaProgram<'a> {
    fn new(samples: Vec<SampleSystem>, prob: &'a MpcProblem) -> Self {
        let t_max = prob.horizon;
        let n_u = prob.n_u();
        let nz = t_max * n_u;
        let mut lo = DVector::zeros(nz);
        let mut hi = DVector::zeros(nz);
        for t in 0..t_max {
            for i in 0..n_u {
                lo[t * n_u + i] = prob.u_min[i];
                hi[t * n_u + i] = prob.u_max[i];
            }
        }
        let mut margin_index = Vec::new();
        for (ci, cons) in prob.constraints.iter().enumerate() {
            for &t in &cons.active_times {
                margin_index.push((ci, t));
            }
        }
        SaaProgram {
            samples,
            prob,
            lo,
            hi,
            margin_index,
            state_cache: RefCell::new(None),
        }
    }

    fn unpack(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        let n_u = self.prob.n_u();
        (0..self.prob.horizon)
            .map(|t| z.rows(t * n_u, n_u).into_owned())
            .collect()
    }

    fn states_for(&self, z: &DVector<f64>) -> Vec<Vec<DVector<f64>>> {
        if let Some((zc, states)) = self.state_cache.borrow().as_ref() {
            if zc == z {
                return states.clone();
            }
        }
        let u = self.unpack(z);
        let states: Vec<Vec<DVector<f64>>> = self
            .samples
            .iter()
            .map(|s| simulate(s, &u, self.prob.horizon))
            .collect();
        *self.state_cache.borrow_mut() = Some((z.clone(), states.clone()));
        states
    }

    /// Stage-cost gradient term 2Q_t x_t (+ tracking) at time t ≥ 1.
    fn stage_grad(&self, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let mut g = 2.0 * &self.prob.q[t - 1] * x;
        if let Some(track) = &self.prob.tracking {
            let resid = &track.c * x - &track.y_ref[t - 1];
            g += 2.0 * track.c.transpose() * (&track.s * resid);
        }
        g
    }

    fn stage_cost(&self, t: usize, x: &DVector<f64>) -> f64 {
        let mut c = (&self.prob.q[t - 1] * x).dot(x);
        if let Some(track) = &self.prob.tracking {
            let resid = &track.c * x - &track.y_ref[t - 1];
            c += (&track.s * &resid).dot(&resid);
        }
        c
    }
}

impl SmoothProgram for SaaProgram<'_> {
    fn dim(&self) -> usize {
        self.prob.horizon * self.prob.n_u()
    }

    fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn objective(&self, z: &DVector<f64>) -> f64 {
        let states = self.states_for(z);
        let u = self.unpack(z);
        let n = self.samples.len() as f64;
        let mut total = 0.0;
        for per_sample in &states {
            for t in 1..=self.prob.horizon {
                total += self.stage_cost(t, &per_sample[t]);
            }
        }
        total /= n;
        for t in 0..self.prob.horizon {
            total += (&self.prob.r[t] * &u[t]).dot(&u[t]);
        }
        total
    }

    fn gradient(&self, z: &DVector<f64>) -> DVector<f64> {
        let states = self.states_for(z);
        let u = self.unpack(z);
        let n_u = self.prob.n_u();
        let t_max = self.prob.horizon;
        let n = self.samples.len() as f64;
        let mut grad = DVector::zeros(self.dim());
        // adjoint sweep per sample: λ_t = ∂cost_t/∂x_t + Aᵀλ_{t+1}
        for (s, per_sample) in self.samples.iter().zip(&states) {
            let mut lambda = DVector::zeros(self.prob.q[0].nrows());
            for t in (1..=t_max).rev() {
                lambda = self.stage_grad(t, &per_sample[t]) + &lambda;
                let gu = s.b.transpose() * &lambda;
                for i in 0..n_u {
                    grad[(t - 1) * n_u + i] += gu[i] / n;
                }
                lambda = s.a.transpose() * lambda;
            }
        }
        for t in 0..t_max {
            let gu = 2.0 * &self.prob.r[t] * &u[t];
            for i in 0..n_u {
                grad[t * n_u + i] += gu[i];
            }
        }
        grad
    }

    fn margins(&self, z: &DVector<f64>) -> DVector<f64> {
        let states = self.states_for(z);
        let n = self.samples.len() as f64;
        let mut out = DVector::zeros(self.margin_index.len());
        for (mi, &(ci, t)) in self.margin_index.iter().enumerate() {
            let cons = &self.prob.constraints[ci];
            let vals: Vec<f64> = states
                .iter()
                .map(|per_sample| cons.a.dot(&per_sample[t]) + cons.b)
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            out[mi] = mean + cons.kappa() * (var + EPS_SMOOTH).sqrt();
        }
        out
    }

    fn margins_jacobian(&self, z: &DVector<f64>) -> DMatrix<f64> {
        let states = self.states_for(z);
        let n = self.samples.len() as f64;
        let n_u = self.prob.n_u();
        let mut jac = DMatrix::zeros(self.margin_index.len(), self.dim());
        for (mi, &(ci, t)) in self.margin_index.iter().enumerate() {
            let cons = &self.prob.constraints[ci];
            let vals: Vec<f64> = states
                .iter()
                .map(|per_sample| cons.a.dot(&per_sample[t]) + cons.b)
                .collect();
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sigma = (var + EPS_SMOOTH).sqrt();
            // ∂m/∂z = mean of p_i + κ/σ · mean of (y_i − ȳ)p_i, where
            // p_i = ∂y_i/∂z from the per-sample adjoint aᵀA^{t−1−s}B
            let mut row = DVector::zeros(self.dim());
            for (i, s) in self.samples.iter().enumerate() {
                let coef = (1.0 + cons.kappa() * (vals[i] - mean) / sigma) / n;
                let mut adj = cons.a.clone();
                for step in (0..t).rev() {
                    let gu = s.b.transpose() * &adj;
                    for c in 0..n_u {
                        row[step * n_u + c] += coef * gu[c];
                    }
                    adj = s.a.transpose() * adj;
                }
            }
            jac.row_mut(mi).copy_from(&row.transpose());
        }
        jac
    }
}

/// Sample-average MPC on `n` realizations of the true system; shares the
/// augmented-Lagrangian backend with the surrogate solve. Returns the
/// solution together with an MC report evaluated at the optimum.
/// `x_traj` packs the sample statistics as a two-mode coefficient vector
/// (block 1 = mean, block 2 = std) so `mean_var` stays meaningful.
pub fn mc_mpc(
    scenario: &Scenario,
    n: usize,
    seed: u64,
    cfg: &SolverConfig,
) -> Result<(MpcSolution, McReport), McError> {
    if n < 2 {
        return Err(McError::TooFewSamples { got: n });
    }
    let start = std::time::Instant::now();
    let prob = scenario.problem_for(1);
    let x0 = prob.x_init.block(0);
    let samples = realize_samples(scenario, &scenario.mixture, |_| x0.clone(), n, seed)?;
    let saa = SaaProgram::new(samples, &prob);
    let (z, status, stats) = solve_al(&saa, cfg);
    let solve_time = start.elapsed().as_secs_f64();
    let n_u = prob.n_u();
    let mut u_star = DMatrix::zeros(prob.horizon, n_u);
    for t in 0..prob.horizon {
        for i in 0..n_u {
            u_star[(t, i)] = z[t * n_u + i];
        }
    }
    let u_seq: Vec<DVector<f64>> = (0..prob.horizon).map(|t| u_star.row(t).transpose()).collect();
    let (mut report, per_time) = mc_propagate(
        scenario,
        |_| x0.clone(),
        &u_seq,
        prob.horizon,
        &prob.constraints,
        n,
        seed,
    )?;
    report.wall_time = solve_time;
    let x_traj = (0..=prob.horizon)
        .map(|t| {
            let (m, s) = column_stats(&per_time[t]);
            let mut c = CoeffVector::zeros(m.len(), 2);
            c.coeffs.rows_mut(0, m.len()).copy_from(&m);
            c.coeffs.rows_mut(m.len(), m.len()).copy_from(&s);
            c
        })
        .collect();
    let objective = saa.objective(&z);
    let sol = MpcSolution {
        u_star,
        x_traj,
        objective,
        stats: SolverStats {
            runtime_seconds: solve_time,
            ..stats
        },
        status,
    };
    Ok((sol, report))
}

/// Exact two-sample Kolmogorov-Smirnov statistic by sorted merge.
pub fn compare_pdf(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "need nonempty samples");
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < sa.len() && j < sb.len() {
        // step past the tied value in both samples before measuring
        let v = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] == v {
            i += 1;
        }
        while j < sb.len() && sb[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d.min(1.0)
}
