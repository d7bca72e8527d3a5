//! Stochastic Galerkin projection: lifts a parameter-dependent linear
//! system onto the orthonormal basis, producing a deterministic system over
//! stacked expansion coefficients.

use crate::basis::{BasisError, OrthonormalBasis};
use crate::mixture::{MultiIndex, SampleBatch};
use crate::quad::QuadratureRule;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GalerkinError {
    #[error("entry degree {entry_degree} plus basis degree {basis_degree} exceeds rule exactness order {exactness}")]
    DegreeOverflow {
        entry_degree: usize,
        basis_degree: usize,
        exactness: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
}

/// Matrix whose entries are polynomials in ξ, stored as sparse term lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyMatrix {
    pub nrows: usize,
    pub ncols: usize,
    /// Row-major entry terms: entries[r·ncols + c] = Σ coeff · ξ^exp.
    pub entries: Vec<Vec<(MultiIndex, f64)>>,
}

impl PolyMatrix {
    pub fn constant(m: &DMatrix<f64>, param_dim: usize) -> Self {
        let mut entries = Vec::with_capacity(m.nrows() * m.ncols());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] == 0.0 {
                    entries.push(vec![]);
                } else {
                    entries.push(vec![(MultiIndex::zeros(param_dim), m[(r, c)])]);
                }
            }
        }
        PolyMatrix {
            nrows: m.nrows(),
            ncols: m.ncols(),
            entries,
        }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        PolyMatrix {
            nrows,
            ncols,
            entries: vec![vec![]; nrows * ncols],
        }
    }

    pub fn set_term(&mut self, r: usize, c: usize, exp: MultiIndex, coeff: f64) {
        self.entries[r * self.ncols + c].push((exp, coeff));
    }

    pub fn max_degree(&self) -> usize {
        self.entries
            .iter()
            .flat_map(|terms| terms.iter().map(|(a, _)| a.total_degree()))
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            for c in 0..self.ncols {
                let mut v = 0.0;
                for (alpha, coeff) in &self.entries[r * self.ncols + c] {
                    let mut mono = 1.0;
                    for (i, &e) in alpha.0.iter().enumerate() {
                        for _ in 0..e {
                            mono *= x[i];
                        }
                    }
                    v += coeff * mono;
                }
                out[(r, c)] = v;
            }
        }
        out
    }
}

/// Discrete-time linear system with polynomial parameter dependence:
/// x_{t+1} = A(ξ)x_t + B(ξ)u_t + D(ξ)ω_t.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StochasticLti {
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub param_dim: usize,
    pub a: PolyMatrix,
    pub b: PolyMatrix,
    pub d: PolyMatrix,
}

impl StochasticLti {
    pub fn max_entry_degree(&self) -> usize {
        self.a
            .max_degree()
            .max(self.b.max_degree())
            .max(self.d.max_degree())
    }

    pub fn eval(&self, x: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        (self.a.eval(x), self.b.eval(x), self.d.eval(x))
    }
}

/// Stacked expansion-coefficient vector: blocks c_1..c_{N_p}, each of the
/// underlying variable's dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffVector {
    pub coeffs: DVector<f64>,
    pub base_dim: usize,
    pub n_p: usize,
}

impl CoeffVector {
    pub fn zeros(base_dim: usize, n_p: usize) -> Self {
        CoeffVector {
            coeffs: DVector::zeros(base_dim * n_p),
            base_dim,
            n_p,
        }
    }

    /// Deterministic quantity: block 1 carries the value, all other
    /// coefficients are zero.
    pub fn deterministic(value: &DVector<f64>, n_p: usize) -> Self {
        let base_dim = value.len();
        let mut coeffs = DVector::zeros(base_dim * n_p);
        coeffs.rows_mut(0, base_dim).copy_from(value);
        CoeffVector {
            coeffs,
            base_dim,
            n_p,
        }
    }

    pub fn block(&self, k: usize) -> DVector<f64> {
        self.coeffs.rows(k * self.base_dim, self.base_dim).into_owned()
    }

    /// (mean, componentwise variance): mean = c_1, var = Σ_{k≥2} c_k².
    pub fn mean_var(&self) -> (DVector<f64>, DVector<f64>) {
        let mean = self.block(0);
        let mut var = DVector::zeros(self.base_dim);
        for k in 1..self.n_p {
            let b = self.block(k);
            for i in 0..self.base_dim {
                var[i] += b[i] * b[i];
            }
        }
        (mean, var)
    }
}

/// The lifted deterministic system x̂_{t+1} = Â x̂_t + B̂ û_t + D̂ ω̂_t plus
/// the Gramian V of the basis under the rule.
#[derive(Debug, Clone)]
pub struct GalerkinSystem {
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub n_x: usize,
    pub n_u: usize,
    pub n_w: usize,
    pub n_p: usize,
    pub rule_residual: f64,
}

impl GalerkinSystem {
    pub fn lifted_dim(&self) -> usize {
        self.n_x * self.n_p
    }
}

/// Gramian V: v_ij = Σ_l Ψ_i(ξ_l)Ψ_j(ξ_l)w_l, mirrored to exact symmetry.
pub fn gramian_v(basis: &OrthonormalBasis, rule: &QuadratureRule) -> DMatrix<f64> {
    let n = basis.len();
    let mut v = DMatrix::zeros(n, n);
    for l in 0..rule.len() {
        let psi = basis.evaluate(&rule.nodes.row(l).transpose()).unwrap();
        let w = rule.weights[l];
        for i in 0..n {
            for j in i..n {
                v[(i, j)] += psi[i] * psi[j] * w;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            v[(i, j)] = v[(j, i)];
        }
    }
    v
}

/// Projects per-node system matrices onto the basis. Row-block j, column
/// block k of each hat matrix holds ⟨M(ξ)Ψ_k, Ψ_j⟩ evaluated by the rule.
pub fn project_nodes<F>(
    node_matrices: F,
    dims: (usize, usize, usize),
    basis: &OrthonormalBasis,
    rule: &QuadratureRule,
) -> GalerkinSystem
where
    F: Fn(&DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>),
{
    let (n_x, n_u, n_w) = dims;
    let n_p = basis.len();
    let mut a_hat = DMatrix::zeros(n_x * n_p, n_x * n_p);
    let mut b_hat = DMatrix::zeros(n_x * n_p, n_u * n_p);
    let mut d_hat = DMatrix::zeros(n_x * n_p, n_w * n_p);
    for l in 0..rule.len() {
        let node = rule.nodes.row(l).transpose();
        let psi = basis.evaluate(&node).unwrap();
        let (a, b, d) = node_matrices(&node);
        let w = rule.weights[l];
        for j in 0..n_p {
            for k in 0..n_p {
                let c = psi[j] * psi[k] * w;
                if c == 0.0 {
                    continue;
                }
                add_scaled_block(&mut a_hat, &a, j * n_x, k * n_x, c);
                add_scaled_block(&mut b_hat, &b, j * n_x, k * n_u, c);
                add_scaled_block(&mut d_hat, &d, j * n_x, k * n_w, c);
            }
        }
    }
    GalerkinSystem {
        a_hat,
        b_hat,
        d_hat,
        v: gramian_v(basis, rule),
        n_x,
        n_u,
        n_w,
        n_p,
        rule_residual: rule.residual,
    }
}

fn add_scaled_block(dst: &mut DMatrix<f64>, src: &DMatrix<f64>, r0: usize, c0: usize, scale: f64) {
    for r in 0..src.nrows() {
        for c in 0..src.ncols() {
            dst[(r0 + r, c0 + c)] += src[(r, c)] * scale;
        }
    }
}

/// Projects a polynomial-entry system; errors when the entry degree would
/// push products past the rule's exactness order.
pub fn project_matrices(
    sys: &StochasticLti,
    basis: &OrthonormalBasis,
    rule: &QuadratureRule,
) -> Result<GalerkinSystem, GalerkinError> {
    let p = basis.degree();
    let entry_degree = sys.max_entry_degree();
    // the rule is exact to 2p; A·Ψ_k·Ψ_j has degree entry + 2p at worst,
    // requiring entry ≤ ... the enforced contract is entry + p ≤ 2p.
    if entry_degree + p > 2 * p {
        return Err(GalerkinError::DegreeOverflow {
            entry_degree,
            basis_degree: p,
            exactness: 2 * p,
        });
    }
    Ok(project_nodes(
        |x| sys.eval(x),
        (sys.n_x, sys.n_u, sys.n_w),
        basis,
        rule,
    ))
}

/// Galerkin projection of a function by quadrature:
/// block k = Σ_l f(ξ_l)·Ψ_k(ξ_l)·w_l.
pub fn expand_function<F>(
    f: F,
    basis: &OrthonormalBasis,
    rule: &QuadratureRule,
) -> CoeffVector
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n_p = basis.len();
    let mut base_dim = 0;
    let mut blocks: Vec<DVector<f64>> = Vec::new();
    for l in 0..rule.len() {
        let node = rule.nodes.row(l).transpose();
        let fv = f(&node);
        if l == 0 {
            base_dim = fv.len();
            blocks = vec![DVector::zeros(base_dim); n_p];
        }
        let psi = basis.evaluate(&node).unwrap();
        let w = rule.weights[l];
        for k in 0..n_p {
            blocks[k].axpy(psi[k] * w, &fv, 1.0);
        }
    }
    let mut coeffs = DVector::zeros(base_dim * n_p);
    for (k, b) in blocks.iter().enumerate() {
        coeffs.rows_mut(k * base_dim, base_dim).copy_from(b);
    }
    CoeffVector {
        coeffs,
        base_dim,
        n_p,
    }
}

/// Applies the lifted recursion T times; returns x̂_0..x̂_T.
pub fn propagate(
    gs: &GalerkinSystem,
    x0: &CoeffVector,
    inputs: &[CoeffVector],
    disturbances: &[CoeffVector],
    horizon: usize,
) -> Result<Vec<CoeffVector>, GalerkinError> {
    if x0.coeffs.len() != gs.lifted_dim() {
        return Err(GalerkinError::DimensionMismatch {
            expected: gs.lifted_dim(),
            got: x0.coeffs.len(),
        });
    }
    if inputs.len() < horizon || disturbances.len() < horizon {
        return Err(GalerkinError::DimensionMismatch {
            expected: horizon,
            got: inputs.len().min(disturbances.len()),
        });
    }
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(x0.clone());
    let mut x = x0.coeffs.clone();
    for t in 0..horizon {
        x = &gs.a_hat * &x + &gs.b_hat * &inputs[t].coeffs + &gs.d_hat * &disturbances[t].coeffs;
        out.push(CoeffVector {
            coeffs: x.clone(),
            base_dim: gs.n_x,
            n_p: gs.n_p,
        });
    }
    Ok(out)
}

/// Evaluates the truncated expansion at sample points:
/// row i = Σ_k c_k·Ψ_k(ξ_i).
pub fn sample_surrogate(
    x_hat: &CoeffVector,
    basis: &OrthonormalBasis,
    points: &SampleBatch,
) -> Result<DMatrix<f64>, GalerkinError> {
    if points.points.ncols() != basis.dim() {
        return Err(GalerkinError::DimensionMismatch {
            expected: basis.dim(),
            got: points.points.ncols(),
        });
    }
    let n = points.points.nrows();
    let mut out = DMatrix::zeros(n, x_hat.base_dim);
    for i in 0..n {
        let psi = basis.evaluate(&points.points.row(i).transpose())?;
        let mut row = DVector::zeros(x_hat.base_dim);
        for k in 0..x_hat.n_p {
            row.axpy(psi[k], &x_hat.block(k), 1.0);
        }
        out.row_mut(i).copy_from(&row.transpose());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::gram_schmidt;
    use crate::mixture::{GaussianMixture, MomentOracle};
    use crate::quad::{generate, QuadConfig};
    use approx::assert_relative_eq;

    fn pipeline_1d(p: usize) -> (GaussianMixture, OrthonormalBasis, OrthonormalBasis, QuadratureRule) {
        let gm = GaussianMixture::new(vec![(
            1.0,
            DVector::zeros(1),
            DMatrix::identity(1, 1),
        )])
        .unwrap();
        let oracle = MomentOracle::for_order(&gm, p);
        let b2p = gram_schmidt(&oracle, 1, 2 * p, 1e-8).unwrap();
        let bp = b2p.truncate(p);
        let cfg = QuadConfig::for_basis(&b2p, 42);
        let rule = generate(&gm, &b2p, &cfg).unwrap();
        (gm, bp, b2p, rule)
    }

    fn obstacle_pipeline() -> (GaussianMixture, OrthonormalBasis, QuadratureRule) {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b2p = gram_schmidt(&oracle, 2, 4, 1e-8).unwrap();
        let bp = b2p.truncate(2);
        let cfg = QuadConfig::for_basis(&b2p, 7);
        let rule = generate(&gm, &b2p, &cfg).unwrap();
        (gm, bp, rule)
    }

    #[test]
    fn constant_system_block_diagonal() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let a0 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.85]);
        let sys = StochasticLti {
            n_x: 2,
            n_u: 1,
            n_w: 1,
            param_dim: 2,
            a: PolyMatrix::constant(&a0, 2),
            b: PolyMatrix::constant(&DMatrix::from_column_slice(2, 1, &[0.25, 0.75]), 2),
            d: PolyMatrix::zeros(2, 1),
        };
        let gs = project_matrices(&sys, &bp, &rule).unwrap();
        for j in 0..bp.len() {
            for k in 0..bp.len() {
                for r in 0..2 {
                    for c in 0..2 {
                        let expected = if j == k { a0[(r, c)] } else { 0.0 };
                        let got = gs.a_hat[(j * 2 + r, k * 2 + c)];
                        assert!(
                            (got - expected).abs() <= 10.0 * rule.residual.max(1e-12),
                            "block ({j},{k}) entry ({r},{c}): {got} vs {expected}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn scalar_xi_gives_hermite_jacobi_matrix() {
        let (_gm, bp, _b2p, rule) = pipeline_1d(2);
        let mut a = PolyMatrix::zeros(1, 1);
        a.set_term(0, 0, crate::mixture::MultiIndex(vec![1]), 1.0);
        let sys = StochasticLti {
            n_x: 1,
            n_u: 1,
            n_w: 1,
            param_dim: 1,
            a,
            b: PolyMatrix::zeros(1, 1),
            d: PolyMatrix::zeros(1, 1),
        };
        let gs = project_matrices(&sys, &bp, &rule).unwrap();
        // normalized Hermite recurrence: E[ξΨ_kΨ_j] = √k on the off-diagonals
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 0.0, 1.0, 0.0, 2.0f64.sqrt(), 0.0, 2.0f64.sqrt(), 0.0],
        );
        for j in 0..3 {
            for k in 0..3 {
                assert_relative_eq!(gs.a_hat[(j, k)], expected[(j, k)], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn degree_overflow_rejected() {
        let (_gm, bp, _b2p, rule) = pipeline_1d(2);
        let mut a = PolyMatrix::zeros(1, 1);
        a.set_term(0, 0, crate::mixture::MultiIndex(vec![3]), 1.0);
        let sys = StochasticLti {
            n_x: 1,
            n_u: 1,
            n_w: 1,
            param_dim: 1,
            a,
            b: PolyMatrix::zeros(1, 1),
            d: PolyMatrix::zeros(1, 1),
        };
        assert!(matches!(
            project_matrices(&sys, &bp, &rule),
            Err(GalerkinError::DegreeOverflow { .. })
        ));
    }

    #[test]
    fn gramian_is_identity_for_exact_rule() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let v = gramian_v(&bp, &rule);
        for i in 0..bp.len() {
            for j in 0..bp.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (v[(i, j)] - target).abs() <= 10.0 * rule.residual.max(1e-9),
                    "V[{i}][{j}] = {}",
                    v[(i, j)]
                );
            }
        }
    }

    #[test]
    fn gramian_single_node_rank_one() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let single = QuadratureRule {
            nodes: rule.nodes.rows(0, 1).into_owned(),
            weights: DVector::from_element(1, 1.0),
            residual: f64::INFINITY,
            basis2p_id: rule.basis2p_id.clone(),
            negative_weight_count: 0,
        };
        let v = gramian_v(&bp, &single);
        let psi = bp.evaluate(&single.nodes.row(0).transpose()).unwrap();
        for i in 0..bp.len() {
            for j in 0..bp.len() {
                assert_relative_eq!(v[(i, j)], psi[i] * psi[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn expand_constant_projects_onto_first_block() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let v = DVector::from_vec(vec![20.0, 10.0]);
        let c = expand_function(|_| v.clone(), &bp, &rule);
        assert_relative_eq!(c.block(0)[0], 20.0, epsilon = 1e-7);
        assert_relative_eq!(c.block(0)[1], 10.0, epsilon = 1e-7);
        for k in 1..bp.len() {
            assert!(c.block(k).norm() <= 10.0 * rule.residual.max(1e-9) * v.norm());
        }
    }

    #[test]
    fn expand_basis_function_hits_own_block() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let v = DVector::from_vec(vec![1.5, -0.5]);
        let bclone = bp.clone();
        let vv = v.clone();
        let c = expand_function(
            move |x| {
                let psi = bclone.evaluate(x).unwrap();
                &vv * psi[2]
            },
            &bp,
            &rule,
        );
        assert!((c.block(2) - &v).norm() <= 1e-6);
        for k in [0usize, 1, 3, 4, 5] {
            assert!(c.block(k).norm() <= 1e-6, "block {k} = {:?}", c.block(k));
        }
    }

    #[test]
    fn identity_dynamics_fixed_point() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let sys = StochasticLti {
            n_x: 2,
            n_u: 1,
            n_w: 1,
            param_dim: 2,
            a: PolyMatrix::constant(&DMatrix::identity(2, 2), 2),
            b: PolyMatrix::zeros(2, 1),
            d: PolyMatrix::zeros(2, 1),
        };
        let gs = project_matrices(&sys, &bp, &rule).unwrap();
        let x0 = CoeffVector::deterministic(&DVector::from_vec(vec![3.0, -1.0]), bp.len());
        let zero_u = vec![CoeffVector::zeros(1, bp.len()); 4];
        let zero_w = vec![CoeffVector::zeros(1, bp.len()); 4];
        let traj = propagate(&gs, &x0, &zero_u, &zero_w, 4).unwrap();
        for x in &traj {
            assert!((x.coeffs.clone() - &x0.coeffs).norm() <= 1e-6);
        }
    }

    #[test]
    fn zero_uncertainty_matches_deterministic_simulation() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let a0 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.85]);
        let b0 = DMatrix::from_column_slice(2, 1, &[0.25, 0.75]);
        let sys = StochasticLti {
            n_x: 2,
            n_u: 1,
            n_w: 1,
            param_dim: 2,
            a: PolyMatrix::constant(&a0, 2),
            b: PolyMatrix::constant(&b0, 2),
            d: PolyMatrix::zeros(2, 1),
        };
        let gs = project_matrices(&sys, &bp, &rule).unwrap();
        let x_init = DVector::from_vec(vec![20.0, 10.0]);
        let x0 = CoeffVector::deterministic(&x_init, bp.len());
        let us = [0.3, -0.5, 0.1, 0.4];
        let u_hat: Vec<CoeffVector> = us
            .iter()
            .map(|&u| CoeffVector::deterministic(&DVector::from_element(1, u), bp.len()))
            .collect();
        let w_hat = vec![CoeffVector::zeros(1, bp.len()); 4];
        let traj = propagate(&gs, &x0, &u_hat, &w_hat, 4).unwrap();
        // independent deterministic simulation
        let mut x = x_init.clone();
        for (t, &u) in us.iter().enumerate() {
            x = &a0 * &x + &b0 * DVector::from_element(1, u);
            let block1 = traj[t + 1].block(0);
            assert!((block1.clone() - &x).norm() <= 1e-10, "t={} diff {}", t + 1, (block1 - &x).norm());
            for k in 1..bp.len() {
                assert!(traj[t + 1].block(k).norm() <= 1e-8);
            }
        }
    }

    #[test]
    fn propagation_is_linear() {
        let (_gm, bp, rule) = obstacle_pipeline();
        let gs = {
            let mut a = PolyMatrix::constant(
                &DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.1, 0.85]),
                2,
            );
            a.set_term(0, 0, crate::mixture::MultiIndex(vec![1, 0]), 0.05);
            let sys = StochasticLti {
                n_x: 2,
                n_u: 1,
                n_w: 1,
                param_dim: 2,
                a,
                b: PolyMatrix::constant(&DMatrix::from_column_slice(2, 1, &[0.25, 0.75]), 2),
                d: PolyMatrix::constant(&DMatrix::from_column_slice(2, 1, &[0.1, 0.0]), 2),
            };
            project_matrices(&sys, &bp, &rule).unwrap()
        };
        let np = bp.len();
        let mk = |seed: u64, dim: usize| {
            let gm = crate::scenario::default_obstacle_mixture();
            let pts = gm.sample(np * dim, seed).points;
            let mut v = DVector::zeros(np * dim);
            for i in 0..np * dim {
                v[i] = pts[(i % pts.nrows(), 0)] * 0.3;
            }
            CoeffVector {
                coeffs: v,
                base_dim: dim,
                n_p: np,
            }
        };
        let x1 = mk(1, 2);
        let x2 = mk(2, 2);
        let u1: Vec<CoeffVector> = (0..3).map(|i| mk(10 + i, 1)).collect();
        let u2: Vec<CoeffVector> = (0..3).map(|i| mk(20 + i, 1)).collect();
        let w1: Vec<CoeffVector> = (0..3).map(|i| mk(30 + i, 1)).collect();
        let w2: Vec<CoeffVector> = (0..3).map(|i| mk(40 + i, 1)).collect();
        let sum_x = CoeffVector {
            coeffs: &x1.coeffs + &x2.coeffs,
            base_dim: 2,
            n_p: np,
        };
        let sum_u: Vec<CoeffVector> = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| CoeffVector {
                coeffs: &a.coeffs + &b.coeffs,
                base_dim: 1,
                n_p: np,
            })
            .collect();
        let sum_w: Vec<CoeffVector> = w1
            .iter()
            .zip(&w2)
            .map(|(a, b)| CoeffVector {
                coeffs: &a.coeffs + &b.coeffs,
                base_dim: 1,
                n_p: np,
            })
            .collect();
        let t1 = propagate(&gs, &x1, &u1, &w1, 3).unwrap();
        let t2 = propagate(&gs, &x2, &u2, &w2, 3).unwrap();
        let ts = propagate(&gs, &sum_x, &sum_u, &sum_w, 3).unwrap();
        for t in 0..=3 {
            let lin = &t1[t].coeffs + &t2[t].coeffs;
            assert!((lin - &ts[t].coeffs).norm() <= 1e-12 * ts[t].coeffs.norm().max(1.0));
        }
    }

    #[test]
    fn mean_var_single_mode() {
        let mut c = CoeffVector::zeros(2, 3);
        c.coeffs[2] = 3.0; // block 2, component 1
        c.coeffs[3] = -4.0;
        let (mean, var) = c.mean_var();
        assert_eq!(mean, DVector::zeros(2));
        assert_relative_eq!(var[0], 9.0);
        assert_relative_eq!(var[1], 16.0);
    }

    #[test]
    fn surrogate_of_deterministic_state_is_constant() {
        let (gm, bp, _rule) = obstacle_pipeline();
        let x = CoeffVector::deterministic(&DVector::from_vec(vec![2.0, -1.0]), bp.len());
        let pts = gm.sample(50, 5);
        let s = sample_surrogate(&x, &bp, &pts).unwrap();
        for i in 0..50 {
            assert_relative_eq!(s[(i, 0)], 2.0, epsilon = 1e-12);
            assert_relative_eq!(s[(i, 1)], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn surrogate_sample_mean_matches_mean_var() {
        let (gm, bp, rule) = obstacle_pipeline();
        let bclone = bp.clone();
        let c = expand_function(
            move |x| {
                let psi = bclone.evaluate(x).unwrap();
                DVector::from_vec(vec![1.0 + 0.5 * psi[1] - 0.3 * psi[3]])
            },
            &bp,
            &rule,
        );
        let n = 1_000_000usize;
        let pts = gm.sample(n, 13);
        let s = sample_surrogate(&c, &bp, &pts).unwrap();
        let mean_mc = s.column(0).sum() / n as f64;
        let (mean, var) = c.mean_var();
        let se = (var[0] / n as f64).sqrt();
        assert!(
            (mean_mc - mean[0]).abs() <= 5.0 * se.max(1e-9),
            "mc {mean_mc} analytic {}",
            mean[0]
        );
    }
}
