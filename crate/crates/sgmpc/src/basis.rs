//! Orthonormal polynomial bases under an arbitrary measure supplied through
//! a raw-moment oracle.
//!
//! Construction is modified Gram–Schmidt over the monomial moment Gram
//! matrix, entirely in coefficient space; no sampling or quadrature is
//! involved, so the achieved Gram residual is limited only by conditioning.

use crate::mixture::{MixtureError, MomentSource, MultiIndex};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BasisError {
    #[error("measure is degenerate: ‖Ψ̂_{k}‖² = {norm_sq:.3e} before normalization")]
    DegenerateMeasure { k: usize, norm_sq: f64 },
    #[error("Gram–Schmidt could not reach tolerance: residual {residual:.3e} > {tol:.3e}")]
    ToleranceNotMet { residual: f64, tol: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Moment(#[from] MixtureError),
}

/// Complete graded-lexicographic list of multi-indices with |α| ≤ p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialOrder {
    pub indices: Vec<MultiIndex>,
    pub dim: usize,
    pub max_degree: usize,
}

/// N = (p+d)!/(p!·d!)
pub fn basis_count(d: usize, p: usize) -> usize {
    // product form of the binomial coefficient, overflow-safe for the sizes here
    let mut n = 1usize;
    for i in 1..=d {
        n = n * (p + i) / i;
    }
    n
}

/// Multi-indices with |α| ≤ p sorted by total degree, ties broken
/// lexicographically with ξ1 highest priority.
pub fn graded_lex_indices(d: usize, p: usize) -> MonomialOrder {
    assert!(d >= 1);
    let mut indices = Vec::with_capacity(basis_count(d, p));
    for degree in 0..=p {
        let mut current = vec![0u32; d];
        emit_degree(&mut indices, &mut current, 0, degree as u32);
    }
    MonomialOrder {
        indices,
        dim: d,
        max_degree: p,
    }
}

// Lexicographic descent: highest exponent on ξ1 first within a degree class.
fn emit_degree(out: &mut Vec<MultiIndex>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos == current.len() - 1 {
        current[pos] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        emit_degree(out, current, pos + 1, remaining - e);
    }
    current[pos] = 0;
}

impl MonomialOrder {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Position of an exponent vector in the order, if present.
    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    /// Monomial values at `x`, built by incremental products: each monomial
    /// of degree ≥ 1 is a lower-degree monomial times one coordinate.
    pub fn evaluate(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut vals = DVector::zeros(self.len());
        for (j, alpha) in self.indices.iter().enumerate() {
            if alpha.total_degree() == 0 {
                vals[j] = 1.0;
                continue;
            }
            let i = alpha.0.iter().position(|&a| a > 0).unwrap();
            let mut parent = alpha.clone();
            parent.0[i] -= 1;
            let pj = self
                .position(&parent)
                .expect("parent monomial precedes child in graded-lex order");
            vals[j] = vals[pj] * x[i];
        }
        vals
    }
}

/// Orthonormal polynomials {Ψ_k} as coefficient rows over a graded-lex
/// monomial order. Row 1 is the constant polynomial 1 and the coefficient
/// matrix is lower triangular.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OrthonormalBasis {
    pub coeffs: DMatrix<f64>,
    pub order: MonomialOrder,
    /// max |E[Ψ_iΨ_j] − δ_ij| achieved at construction
    pub gram_residual: f64,
}

const DEFAULT_TOL: f64 = 1e-8;

/// Moment Gram matrix of the monomials: G[a][b] = E[ξ^(α_a+α_b)].
fn moment_gram(
    oracle: &dyn MomentSource,
    order: &MonomialOrder,
) -> Result<DMatrix<f64>, MixtureError> {
    let n = order.len();
    let mut g = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let m = oracle.raw_moment(&order.indices[a].add(&order.indices[b]))?;
            g[(a, b)] = m;
            g[(b, a)] = m;
        }
    }
    Ok(g)
}

/// Builds the orthonormal basis for degree ≤ p under the oracle's measure.
///
/// Modified Gram–Schmidt with one re-orthogonalization pass; expectations
/// come from the analytic moment oracle throughout.
pub fn gram_schmidt(
    oracle: &dyn MomentSource,
    d: usize,
    p: usize,
    tol: f64,
) -> Result<OrthonormalBasis, BasisError> {
    assert!(tol > 0.0);
    let order = graded_lex_indices(d, p);
    let n = order.len();
    let g = moment_gram(oracle, &order)?;
    let mut c = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let mut row = DVector::zeros(n);
        row[k] = 1.0;
        // two MGS passes
        for _ in 0..2 {
            for i in 0..k {
                let ci = c.row(i).transpose();
                let r = (&g * &row).dot(&ci);
                row -= ci * r;
            }
        }
        let norm_sq = (&g * &row).dot(&row);
        if norm_sq <= tol * tol {
            return Err(BasisError::DegenerateMeasure { k: k + 1, norm_sq });
        }
        row /= norm_sq.sqrt();
        c.row_mut(k).copy_from(&row.transpose());
    }
    let mut residual = gram_residual(&c, &g);
    if residual > tol {
        // one more full re-orthogonalization sweep over all rows
        for k in 0..n {
            let mut row = c.row(k).transpose();
            for i in 0..k {
                let ci = c.row(i).transpose();
                let r = (&g * &row).dot(&ci);
                row -= ci * r;
            }
            let norm_sq = (&g * &row).dot(&row);
            if norm_sq <= tol * tol {
                return Err(BasisError::DegenerateMeasure { k: k + 1, norm_sq });
            }
            row /= norm_sq.sqrt();
            c.row_mut(k).copy_from(&row.transpose());
        }
        residual = gram_residual(&c, &g);
        if residual > tol {
            return Err(BasisError::ToleranceNotMet { residual, tol });
        }
    }
    Ok(OrthonormalBasis {
        coeffs: c,
        order,
        gram_residual: residual,
    })
}

/// Convenience wrapper with the default 1e-8 tolerance.
pub fn gram_schmidt_default(
    oracle: &dyn MomentSource,
    d: usize,
    p: usize,
) -> Result<OrthonormalBasis, BasisError> {
    gram_schmidt(oracle, d, p, DEFAULT_TOL)
}

fn gram_residual(c: &DMatrix<f64>, g: &DMatrix<f64>) -> f64 {
    let m = c * g * c.transpose();
    let n = c.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((m[(i, j)] - target).abs());
        }
    }
    worst
}

impl OrthonormalBasis {
    pub fn dim(&self) -> usize {
        self.order.dim
    }

    pub fn degree(&self) -> usize {
        self.order.max_degree
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// (Ψ_1(x), …, Ψ_N(x))
    pub fn evaluate(&self, x: &DVector<f64>) -> Result<DVector<f64>, BasisError> {
        if x.len() != self.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mono = self.order.evaluate(x);
        Ok(&self.coeffs * mono)
    }

    /// Row i = basis values at points row i.
    pub fn evaluate_batch(&self, points: &DMatrix<f64>) -> Result<DMatrix<f64>, BasisError> {
        let n = points.nrows();
        let mut out = DMatrix::zeros(n, self.len());
        for i in 0..n {
            let x = points.row(i).transpose();
            let vals = self.evaluate(&x)?;
            out.row_mut(i).copy_from(&vals.transpose());
        }
        Ok(out)
    }

    /// Gradient matrix at `x`: entry (k, i) = ∂Ψ_k/∂ξ_i, by differentiating
    /// the monomial representation.
    pub fn gradient(&self, x: &DVector<f64>) -> Result<DMatrix<f64>, BasisError> {
        if x.len() != self.dim() {
            return Err(BasisError::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mono = self.order.evaluate(x);
        let d = self.dim();
        let n = self.len();
        // dmono[(j, i)] = ∂/∂ξ_i of monomial j = α_i · ξ^{α − e_i}
        let mut dmono = DMatrix::zeros(n, d);
        for (j, alpha) in self.order.indices.iter().enumerate() {
            for i in 0..d {
                if alpha.0[i] == 0 {
                    continue;
                }
                let mut parent = alpha.clone();
                parent.0[i] -= 1;
                let pj = self.order.position(&parent).unwrap();
                dmono[(j, i)] = alpha.0[i] as f64 * mono[pj];
            }
        }
        Ok(&self.coeffs * dmono)
    }

    /// Restriction to degree ≤ p. Valid because Gram–Schmidt over the
    /// graded-lex order is nested: the first N_p rows of a higher-order
    /// basis are exactly the order-p basis.
    pub fn truncate(&self, p: usize) -> OrthonormalBasis {
        assert!(p <= self.degree());
        let n = basis_count(self.dim(), p);
        let order = graded_lex_indices(self.dim(), p);
        OrthonormalBasis {
            coeffs: self.coeffs.view((0, 0), (n, n)).into_owned(),
            order,
            gram_residual: self.gram_residual,
        }
    }

    /// Projects a polynomial given by monomial coefficients onto the basis
    /// and reconstructs it; used by round-trip checks.
    pub fn project_monomial_coeffs(&self, mono_coeffs: &DVector<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        // coefficients of q in the basis: b_k = <q, Ψ_k> = mono^T G c_k
        &self.coeffs * (g * mono_coeffs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::{GaussianMixture, MomentOracle};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn std_normal(d: usize) -> GaussianMixture {
        GaussianMixture::new(vec![(1.0, DVector::zeros(d), DMatrix::identity(d, d))]).unwrap()
    }

    #[test]
    fn graded_lex_small_cases() {
        let o = graded_lex_indices(2, 1);
        assert_eq!(
            o.indices,
            vec![
                MultiIndex(vec![0, 0]),
                MultiIndex(vec![1, 0]),
                MultiIndex(vec![0, 1])
            ]
        );
        assert_eq!(graded_lex_indices(2, 2).len(), 6);
        assert_eq!(graded_lex_indices(3, 2).len(), 10);
        assert_eq!(basis_count(2, 2), 6);
        assert_eq!(basis_count(3, 2), 10);
    }

    #[test]
    fn graded_lex_sorted_and_complete() {
        let o = graded_lex_indices(3, 4);
        assert_eq!(o.indices[0], MultiIndex(vec![0, 0, 0]));
        for w in o.indices.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            assert!(
                a.total_degree() < b.total_degree()
                    || (a.total_degree() == b.total_degree() && a.0 > b.0),
                "order violated at {a:?} -> {b:?}"
            );
        }
        assert_eq!(o.len(), basis_count(3, 4));
    }

    #[test]
    fn hermite_basis_d1() {
        let gm = std_normal(1);
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 1, 2, 1e-8).unwrap();
        // Ψ1 = 1, Ψ2 = ξ, Ψ3 = (ξ²−1)/√2
        assert_relative_eq!(b.coeffs[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(b.coeffs[(1, 1)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(b.coeffs[(1, 0)], 0.0, epsilon = 1e-10);
        let s = 1.0 / 2.0f64.sqrt();
        assert_relative_eq!(b.coeffs[(2, 0)], -s, epsilon = 1e-10);
        assert_relative_eq!(b.coeffs[(2, 2)], s, epsilon = 1e-10);
        assert!(b.gram_residual <= 1e-8);
    }

    /// Moment oracle of the uniform measure on [−1, 1].
    struct UniformOracle;
    impl crate::mixture::MomentSource for UniformOracle {
        fn raw_moment(&self, alpha: &MultiIndex) -> Result<f64, crate::mixture::MixtureError> {
            let k = alpha.0[0];
            Ok(if k % 2 == 1 { 0.0 } else { 1.0 / (k as f64 + 1.0) })
        }
        fn dim(&self) -> usize {
            1
        }
    }

    #[test]
    fn legendre_first_order() {
        let b = gram_schmidt(&UniformOracle, 1, 1, 1e-8).unwrap();
        // Ψ2 = √3 ξ since E[ξ²] = 1/3 under uniform on [−1, 1]
        assert_relative_eq!(b.coeffs[(1, 1)], 3.0f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn first_basis_function_is_one() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 3);
        let b = gram_schmidt(&oracle, 2, 3, 1e-8).unwrap();
        assert_relative_eq!(b.coeffs[(0, 0)], 1.0, epsilon = 1e-12);
        for j in 1..b.len() {
            assert_eq!(b.coeffs[(0, j)], 0.0);
        }
    }

    #[test]
    fn coeffs_lower_triangular() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        for k in 0..b.len() {
            for j in k + 1..b.len() {
                assert_eq!(b.coeffs[(k, j)], 0.0, "coeffs[{k}][{j}] nonzero");
            }
        }
    }

    #[test]
    fn evaluate_hermite_at_two() {
        let gm = std_normal(1);
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 1, 2, 1e-8).unwrap();
        let v = b.evaluate(&DVector::from_element(1, 2.0)).unwrap();
        assert_relative_eq!(v[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], 2.0, epsilon = 1e-10);
        assert_relative_eq!(v[2], 3.0 / 2.0f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn evaluate_tensor_hermite_at_origin() {
        let gm = std_normal(2);
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        let v = b.evaluate(&DVector::zeros(2)).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        let expected = [1.0, 0.0, 0.0, -s, 0.0, -s];
        for (i, e) in expected.iter().enumerate() {
            assert_relative_eq!(v[i], *e, epsilon = 1e-10);
        }
    }

    #[test]
    fn batch_matches_single_and_permutes() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        let pts = gm.sample(5, 11).points;
        let batch = b.evaluate_batch(&pts).unwrap();
        for i in 0..5 {
            let single = b.evaluate(&pts.row(i).transpose()).unwrap();
            for k in 0..b.len() {
                assert_relative_eq!(batch[(i, k)], single[k], epsilon = 1e-14);
            }
        }
        // permute rows
        let mut perm = DMatrix::zeros(5, 2);
        for i in 0..5 {
            perm.row_mut(i).copy_from(&pts.row(4 - i));
        }
        let batch_p = b.evaluate_batch(&perm).unwrap();
        for i in 0..5 {
            for k in 0..b.len() {
                assert_relative_eq!(batch_p[(i, k)], batch[(4 - i, k)], epsilon = 0.0);
            }
        }
    }

    #[test]
    fn empirical_gram_close_to_identity() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        let n = 1_000_000usize;
        let pts = gm.sample(n, 99).points;
        let phi = b.evaluate_batch(&pts).unwrap();
        for i in 0..b.len() {
            for j in i..b.len() {
                let prods: Vec<f64> = (0..n).map(|r| phi[(r, i)] * phi[(r, j)]).collect();
                let mean = prods.iter().sum::<f64>() / n as f64;
                let var = prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
                let se = (var / n as f64).sqrt().max(1e-12);
                let target = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (mean - target).abs() <= 5.0 * se,
                    "entry ({i},{j}): {mean} vs {target}, se {se}"
                );
            }
        }
    }

    #[test]
    fn degree_p_reproduction() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        let g = super::moment_gram(&oracle, &b.order).unwrap();
        // random degree-2 polynomial in monomial coefficients
        let q = DVector::from_vec(vec![0.7, -1.3, 2.1, 0.4, -0.9, 1.6]);
        let basis_coeffs = b.project_monomial_coeffs(&q, &g);
        // reconstruct monomial coefficients: q ≈ Cᵀ b
        let back = b.coeffs.transpose() * basis_coeffs;
        for i in 0..q.len() {
            assert_relative_eq!(back[i], q[i], epsilon = 1e-10);
        }
    }

    #[test]
    fn truncation_is_prefix() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 2);
        let b4 = gram_schmidt(&oracle, 2, 4, 1e-8).unwrap();
        let b2 = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
        let t = b4.truncate(2);
        assert_eq!(t.len(), b2.len());
        for k in 0..t.len() {
            for j in 0..t.len() {
                assert_relative_eq!(t.coeffs[(k, j)], b2.coeffs[(k, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let gm = crate::scenario::default_obstacle_mixture();
        let oracle = MomentOracle::for_order(&gm, 3);
        let b = gram_schmidt(&oracle, 2, 3, 1e-8).unwrap();
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let grad = b.gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fp = b.evaluate(&xp).unwrap();
            let fm = b.evaluate(&xm).unwrap();
            for k in 0..b.len() {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                assert_relative_eq!(grad[(k, i)], fd, epsilon = 1e-5, max_relative = 1e-5);
            }
        }
    }

    proptest! {
        #[test]
        fn orthonormality_random_mixtures(
            m1 in -2.0..2.0f64, m2 in -2.0..2.0f64,
            s1 in 0.3..1.5f64, s2 in 0.3..1.5f64,
            rho in -0.6..0.6f64, w in 0.2..0.8f64,
        ) {
            let cov1 = DMatrix::from_row_slice(2, 2, &[s1, rho * (s1 * s2).sqrt(), rho * (s1 * s2).sqrt(), s2]);
            let cov2 = DMatrix::identity(2, 2) * 0.5;
            let gm = GaussianMixture::new(vec![
                (w, DVector::from_vec(vec![m1, m2]), cov1),
                (1.0 - w, DVector::from_vec(vec![-m2, m1]), cov2),
            ]).unwrap();
            let oracle = MomentOracle::for_order(&gm, 2);
            let b = gram_schmidt(&oracle, 2, 2, 1e-8).unwrap();
            prop_assert!(b.gram_residual <= 1e-8);
        }
    }
}
