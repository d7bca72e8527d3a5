//! Optimization-based quadrature for correlated measures.
//!
//! Nodes and weights are fit to the exactness conditions
//! `Φ(ξ̄)w = e_1` over the order-2p orthonormal basis by block coordinate
//! descent: a linear least-squares weight block alternating with a damped
//! Gauss–Newton node block. The rule is then shrunk one node at a time by
//! weighted clustering until refinement of the reduced rule fails.

use crate::basis::{gram_schmidt, BasisError, OrthonormalBasis};
use crate::mixture::{GaussianMixture, MomentOracle};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("refinement stalled at residual {residual:.3e} (tolerance {tol:.3e})")]
    Stalled { residual: f64, tol: f64 },
    #[error("cannot reduce a rule with a single node")]
    TooFewNodes,
    #[error("no exact rule found: best residual {residual:.3e} with {m} nodes")]
    NoExactRuleFound { residual: f64, m: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Quadrature nodes and weights exact (to `residual`) for the order-2p basis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadratureRule {
    /// M×d node matrix, one node per row.
    pub nodes: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// Achieved ‖Φ(ξ̄)w − e_1‖₂.
    pub residual: f64,
    /// Identifier of the order-2p basis the rule was fit against.
    pub basis2p_id: String,
    /// Negative weights are permitted by the unconstrained least squares;
    /// occurrences are surfaced here rather than suppressed.
    pub negative_weight_count: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.nrows() == 0
    }

    pub fn weight_sum(&self) -> f64 {
        self.weights.sum()
    }

    fn count_negative(weights: &DVector<f64>) -> usize {
        weights.iter().filter(|&&w| w < 0.0).count()
    }

    /// Smallest pairwise node distance in max norm.
    pub fn min_node_separation(&self) -> f64 {
        let m = self.len();
        let mut best = f64::INFINITY;
        for a in 0..m {
            for b in a + 1..m {
                let mut dist: f64 = 0.0;
                for i in 0..self.nodes.ncols() {
                    dist = dist.max((self.nodes[(a, i)] - self.nodes[(b, i)]).abs());
                }
                best = best.min(dist);
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct QuadConfig {
    /// Initial node count; 3·N_{2p} when built via [`QuadConfig::for_basis`].
    pub m_init: usize,
    pub exactness_tol: f64,
    pub bcd_max_iters: usize,
    pub inner_ls_tol: f64,
    pub reduction_enabled: bool,
    pub seed: u64,
}

impl QuadConfig {
    pub fn for_basis(basis2p: &OrthonormalBasis, seed: u64) -> Self {
        QuadConfig {
            m_init: 3 * basis2p.len(),
            exactness_tol: 1e-8,
            bcd_max_iters: 500,
            inner_ls_tol: 1e-14,
            reduction_enabled: true,
            seed,
        }
    }
}

fn basis_id(basis: &OrthonormalBasis) -> String {
    format!("d{}-p{}-N{}", basis.dim(), basis.degree(), basis.len())
}

/// Φ(ξ̄): entry (k, l) = Ψ_k(ξ_l).
fn assemble_phi(basis: &OrthonormalBasis, nodes: &DMatrix<f64>) -> DMatrix<f64> {
    let m = nodes.nrows();
    let n = basis.len();
    let mut phi = DMatrix::zeros(n, m);
    for l in 0..m {
        let vals = basis.evaluate(&nodes.row(l).transpose()).unwrap();
        phi.column_mut(l).copy_from(&vals);
    }
    phi
}

fn residual_norm(phi: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    let n = phi.nrows();
    let mut r = phi * w;
    r[0] -= 1.0;
    let _ = n;
    r.norm()
}

/// Weight block: minimum-norm least squares for fixed nodes.
fn solve_weights(phi: &DMatrix<f64>) -> DVector<f64> {
    let mut e1 = DVector::zeros(phi.nrows());
    e1[0] = 1.0;
    let svd = phi.clone().svd(true, true);
    svd.solve(&e1, 1e-13).expect("SVD least squares")
}

/// Nodes drawn i.i.d. from the measure, uniform weights 1/m.
pub fn initial_rule(
    basis2p: &OrthonormalBasis,
    gm: &GaussianMixture,
    m: usize,
    seed: u64,
) -> QuadratureRule {
    assert!(m >= 1);
    let nodes = gm.sample(m, seed).points;
    let weights = DVector::from_element(m, 1.0 / m as f64);
    let phi = assemble_phi(basis2p, &nodes);
    let residual = residual_norm(&phi, &weights);
    QuadratureRule {
        negative_weight_count: QuadratureRule::count_negative(&weights),
        nodes,
        weights,
        residual,
        basis2p_id: basis_id(basis2p),
    }
}

/// One damped Gauss–Newton (Levenberg–Marquardt) step on the nodes with
/// weights fixed. Returns the new nodes and residual if the step improved,
/// together with the updated damping.
fn node_step(
    basis: &OrthonormalBasis,
    nodes: &DMatrix<f64>,
    w: &DVector<f64>,
    current_residual: f64,
    lambda: f64,
) -> Option<(DMatrix<f64>, f64, f64)> {
    let m = nodes.nrows();
    let d = nodes.ncols();
    let n = basis.len();
    let phi = assemble_phi(basis, nodes);
    let mut r = &phi * w;
    r[0] -= 1.0;
    // J[k, l·d + i] = w_l · ∂Ψ_k/∂ξ_i(ξ_l)
    let mut jac = DMatrix::zeros(n, m * d);
    for l in 0..m {
        let grad = basis.gradient(&nodes.row(l).transpose()).unwrap();
        for i in 0..d {
            for k in 0..n {
                jac[(k, l * d + i)] = w[l] * grad[(k, i)];
            }
        }
    }
    let jtj = jac.transpose() * &jac;
    let jtr = jac.transpose() * &r;
    let mut lam = lambda;
    for _ in 0..12 {
        let mut lhs = jtj.clone();
        for i in 0..lhs.nrows() {
            lhs[(i, i)] += lam;
        }
        if let Some(chol) = lhs.cholesky() {
            let delta = chol.solve(&(-&jtr));
            let mut trial = nodes.clone();
            for l in 0..m {
                for i in 0..d {
                    trial[(l, i)] += delta[l * d + i];
                }
            }
            let trial_phi = assemble_phi(basis, &trial);
            let trial_res = residual_norm(&trial_phi, w);
            if trial_res < current_residual {
                return Some((trial, trial_res, (lam / 3.0).max(1e-12)));
            }
        }
        lam *= 4.0;
    }
    None
}

/// Block coordinate descent on the exactness conditions; monotone in the
/// residual by construction (weight solves are exact minimizers, node steps
/// are rejected unless they improve).
pub fn bcd_refine(
    rule: &QuadratureRule,
    basis2p: &OrthonormalBasis,
    cfg: &QuadConfig,
) -> Result<QuadratureRule, QuadError> {
    let mut nodes = rule.nodes.clone();
    let mut phi = assemble_phi(basis2p, &nodes);
    let mut weights = solve_weights(&phi);
    let mut residual = residual_norm(&phi, &weights);
    let mut lambda = 1e-3;
    let mut no_improve = 0usize;
    let mut best = residual;
    for _ in 0..cfg.bcd_max_iters {
        if residual <= cfg.exactness_tol {
            break;
        }
        match node_step(basis2p, &nodes, &weights, residual, lambda) {
            Some((new_nodes, _, new_lambda)) => {
                nodes = new_nodes;
                lambda = new_lambda;
            }
            None => {
                lambda = (lambda * 4.0).min(1e8);
            }
        }
        phi = assemble_phi(basis2p, &nodes);
        weights = solve_weights(&phi);
        residual = residual_norm(&phi, &weights);
        if residual < best * (1.0 - 1e-3) || residual < best - 1e-14 {
            best = residual;
            no_improve = 0;
        } else {
            no_improve += 1;
            if no_improve >= 20 && residual > cfg.exactness_tol {
                return Err(QuadError::Stalled {
                    residual: best,
                    tol: cfg.exactness_tol,
                });
            }
        }
    }
    if residual > rule.residual {
        // contract: never worse than the input
        return Ok(rule.clone());
    }
    Ok(QuadratureRule {
        negative_weight_count: QuadratureRule::count_negative(&weights),
        nodes,
        weights,
        residual,
        basis2p_id: basis_id(basis2p),
    })
}

/// Merges the two nodes closest under the weight-scaled distance
/// `‖ξ_a − ξ_b‖₂ · min(w_a, w_b)` into their weight-weighted centroid.
/// Ties break to the lowest index pair.
pub fn cluster_reduce(rule: &QuadratureRule) -> Result<QuadratureRule, QuadError> {
    let m = rule.len();
    if m < 2 {
        return Err(QuadError::TooFewNodes);
    }
    let d = rule.nodes.ncols();
    let mut best_pair = (0usize, 1usize);
    let mut best_score = f64::INFINITY;
    for a in 0..m {
        for b in a + 1..m {
            let dist = (rule.nodes.row(a) - rule.nodes.row(b)).norm();
            let score = dist * rule.weights[a].min(rule.weights[b]);
            if score < best_score {
                best_score = score;
                best_pair = (a, b);
            }
        }
    }
    let (a, b) = best_pair;
    let wa = rule.weights[a];
    let wb = rule.weights[b];
    let wsum = wa + wb;
    let merged: DVector<f64> = if wsum.abs() > 1e-14 {
        (rule.nodes.row(a).transpose() * wa + rule.nodes.row(b).transpose() * wb) / wsum
    } else {
        (rule.nodes.row(a).transpose() + rule.nodes.row(b).transpose()) * 0.5
    };
    let mut nodes = DMatrix::zeros(m - 1, d);
    let mut weights = DVector::zeros(m - 1);
    let mut out = 0usize;
    for l in 0..m {
        if l == b {
            continue;
        }
        if l == a {
            nodes.row_mut(out).copy_from(&merged.transpose());
            weights[out] = wsum;
        } else {
            nodes.row_mut(out).copy_from(&rule.nodes.row(l));
            weights[out] = rule.weights[l];
        }
        out += 1;
    }
    Ok(QuadratureRule {
        negative_weight_count: QuadratureRule::count_negative(&weights),
        nodes,
        weights,
        residual: f64::INFINITY, // unrefined
        basis2p_id: rule.basis2p_id.clone(),
    })
}

/// Attempts to extend the rule's exactness to order 2p+1 by joint
/// Levenberg–Marquardt on nodes and weights. Among the rules satisfying the
/// order-2p conditions this selects a maximal-accuracy representative (the
/// classical Gauss rule, when one exists at the current node count). The
/// polished rule is kept only if the order-2p residual stays within
/// tolerance.
fn polish(
    rule: &QuadratureRule,
    basis2p: &OrthonormalBasis,
    basis_ext: &OrthonormalBasis,
    cfg: &QuadConfig,
) -> QuadratureRule {
    let m = rule.len();
    let d = rule.nodes.ncols();
    let n_ext = basis_ext.len();
    let n2p = basis2p.len();
    let mut nodes = rule.nodes.clone();
    let mut weights = rule.weights.clone();
    let eval_res = |nodes: &DMatrix<f64>, weights: &DVector<f64>| -> DVector<f64> {
        let phi = assemble_phi(basis_ext, nodes);
        let mut r = &phi * weights;
        r[0] -= 1.0;
        r
    };
    let mut r = eval_res(&nodes, &weights);
    let mut res = r.norm();
    let mut lambda = 1e-3;
    for _ in 0..150 {
        if res <= cfg.exactness_tol {
            break;
        }
        // joint Jacobian: columns = node coordinates then weights
        let mut jac = DMatrix::zeros(n_ext, m * d + m);
        for l in 0..m {
            let grad = basis_ext.gradient(&nodes.row(l).transpose()).unwrap();
            let vals = basis_ext.evaluate(&nodes.row(l).transpose()).unwrap();
            for i in 0..d {
                for k in 0..n_ext {
                    jac[(k, l * d + i)] = weights[l] * grad[(k, i)];
                }
            }
            for k in 0..n_ext {
                jac[(k, m * d + l)] = vals[k];
            }
        }
        let jtj = jac.transpose() * &jac;
        let jtr = jac.transpose() * &r;
        let mut improved = false;
        for _ in 0..10 {
            let mut lhs = jtj.clone();
            for i in 0..lhs.nrows() {
                lhs[(i, i)] += lambda;
            }
            let Some(chol) = lhs.cholesky() else {
                lambda *= 4.0;
                continue;
            };
            let delta = chol.solve(&(-&jtr));
            let mut trial_nodes = nodes.clone();
            let mut trial_weights = weights.clone();
            for l in 0..m {
                for i in 0..d {
                    trial_nodes[(l, i)] += delta[l * d + i];
                }
                trial_weights[l] += delta[m * d + l];
            }
            let trial_r = eval_res(&trial_nodes, &trial_weights);
            if trial_r.norm() < res {
                nodes = trial_nodes;
                weights = trial_weights;
                r = trial_r;
                res = r.norm();
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    // keep only if the primary (order-2p) conditions still hold
    let primary = r.rows(0, n2p).norm();
    let candidate = QuadratureRule {
        negative_weight_count: QuadratureRule::count_negative(&weights),
        nodes,
        weights,
        residual: primary,
        basis2p_id: rule.basis2p_id.clone(),
    };
    if primary <= cfg.exactness_tol && candidate.min_node_separation() > 1e-10 {
        candidate
    } else {
        rule.clone()
    }
}

/// Full generation loop: refine, snapshot, cluster-reduce, repeat; the last
/// successfully refined rule is returned when a further reduction fails.
pub fn generate(
    gm: &GaussianMixture,
    basis2p: &OrthonormalBasis,
    cfg: &QuadConfig,
) -> Result<QuadratureRule, QuadError> {
    let p2 = basis2p.degree();
    let oracle = MomentOracle::new(gm, 2 * (p2 + 1));
    let basis_ext = gram_schmidt(&oracle, gm.dim(), p2 + 1, 1e-8).ok();

    let first = initial_rule(basis2p, gm, cfg.m_init.max(1), cfg.seed);
    let mut rule = match bcd_refine(&first, basis2p, cfg) {
        Ok(r) if r.residual <= cfg.exactness_tol => r,
        _ => {
            // one retry with twice the nodes
            let retry = initial_rule(basis2p, gm, 2 * cfg.m_init.max(1), cfg.seed.wrapping_add(1));
            match bcd_refine(&retry, basis2p, cfg) {
                Ok(r) if r.residual <= cfg.exactness_tol => r,
                Ok(r) => {
                    return Err(QuadError::NoExactRuleFound {
                        residual: r.residual,
                        m: r.len(),
                    })
                }
                Err(QuadError::Stalled { residual, .. }) => {
                    return Err(QuadError::NoExactRuleFound {
                        residual,
                        m: 2 * cfg.m_init,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    };
    if !cfg.reduction_enabled {
        if let Some(ext) = &basis_ext {
            rule = polish(&rule, basis2p, ext, cfg);
        }
        return Ok(rule);
    }
    loop {
        if let Some(ext) = &basis_ext {
            rule = polish(&rule, basis2p, ext, cfg);
        }
        if rule.len() == 1 {
            return Ok(rule);
        }
        let reduced = cluster_reduce(&rule)?;
        match bcd_refine(&reduced, basis2p, cfg) {
            Ok(r) if r.residual <= cfg.exactness_tol && r.min_node_separation() > 1e-10 => {
                rule = r;
            }
            _ => return Ok(rule),
        }
    }
}
