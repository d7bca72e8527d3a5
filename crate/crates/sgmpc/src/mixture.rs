//! Gaussian-mixture parameter distributions: sampling, density evaluation,
//! and an exact analytic raw-moment oracle.
//!
//! The mixture is the source of truth for the uncertain parameter vector:
//! basis construction consumes its moments analytically (sampled moments
//! would corrupt orthonormality), while Monte Carlo baselines consume its
//! samples.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixtureError {
    #[error("covariance of component {index} is not positive semi-definite (min eigenvalue {min_eig:.3e})")]
    NonPsdCovariance { index: usize, min_eig: f64 },
    #[error("mixture weights sum to {sum}, expected 1")]
    WeightSumInvalid { sum: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("no components supplied")]
    Empty,
    #[error("Cholesky factorization failed: covariance has eigenvalue {min_eig:.3e} < tolerance")]
    CholeskyFailure { min_eig: f64 },
    #[error("moment degree {degree} exceeds configured cap {cap}")]
    DegreeOverflow { degree: usize, cap: usize },
}

/// Exponent vector of a monomial `ξ1^a1 … ξd^ad`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zeros(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn total_degree(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Sum of two exponent vectors.
    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(
            self.0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }
}

/// One mixture component: weight, mean, covariance, and a precomputed
/// square root of the covariance for sampling.
#[derive(Debug, Clone)]
pub struct Component {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    /// log-density normalization pieces; `None` when the covariance is
    /// singular (density undefined on all of R^d).
    log_norm: Option<(DMatrix<f64>, f64)>, // (precision, log normalizing constant)
}

/// Joint distribution of the uncertain parameter vector as a finite
/// Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GaussianMixture {
    components: Vec<Component>,
    dim: usize,
}

/// Reproducible batch of i.i.d. draws.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    /// n×d: one row per draw.
    pub points: DMatrix<f64>,
    pub seed: u64,
    pub generator_id: String,
}

const WEIGHT_RENORM_TOL: f64 = 1e-9;
const PSD_REL_TOL: f64 = 1e-10;
const CHOL_EIG_TOL: f64 = -1e-8;

fn sym_eigen_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let sym = nalgebra::SymmetricEigen::new(cov.clone());
    let min_eig = sym.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < CHOL_EIG_TOL {
        return Err(min_eig);
    }
    let d = cov.nrows();
    let mut sqrt = DMatrix::zeros(d, d);
    for j in 0..d {
        let lam = sym.eigenvalues[j].max(0.0).sqrt();
        for i in 0..d {
            sqrt[(i, j)] = sym.eigenvectors[(i, j)] * lam;
        }
    }
    Ok(sqrt)
}

impl GaussianMixture {
    /// Validates components and builds the mixture. Weights are renormalized
    /// only when their sum deviates from 1 by at most 1e-9.
    pub fn new(
        components: Vec<(f64, DVector<f64>, DMatrix<f64>)>,
    ) -> Result<Self, MixtureError> {
        if components.is_empty() {
            return Err(MixtureError::Empty);
        }
        let dim = components[0].1.len();
        let sum: f64 = components.iter().map(|c| c.0).sum();
        if (sum - 1.0).abs() > WEIGHT_RENORM_TOL {
            return Err(MixtureError::WeightSumInvalid { sum });
        }
        let mut out = Vec::with_capacity(components.len());
        for (index, (weight, mean, cov)) in components.into_iter().enumerate() {
            if weight < 0.0 {
                return Err(MixtureError::WeightSumInvalid { sum });
            }
            if mean.len() != dim || cov.nrows() != dim || cov.ncols() != dim {
                return Err(MixtureError::DimensionMismatch {
                    expected: dim,
                    got: mean.len().max(cov.nrows()),
                });
            }
            let cov = (&cov + cov.transpose()) * 0.5;
            let scale = cov.norm().max(1.0);
            let sym = nalgebra::SymmetricEigen::new(cov.clone());
            let min_eig = sym.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            if min_eig < -PSD_REL_TOL * scale {
                return Err(MixtureError::NonPsdCovariance { index, min_eig });
            }
            // Cholesky when strictly positive definite, eigen square root as
            // the fallback for degenerate noise directions.
            let sqrt_cov = match cov.clone().cholesky() {
                Some(ch) => ch.l(),
                None => sym_eigen_sqrt(&cov)
                    .map_err(|min_eig| MixtureError::CholeskyFailure { min_eig })?,
            };
            let log_norm = cov.clone().cholesky().map(|ch| {
                let log_det: f64 = (0..dim).map(|i| ch.l()[(i, i)].ln()).sum::<f64>() * 2.0;
                let prec = ch.inverse();
                let log_c = -0.5 * (dim as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
                (prec, log_c)
            });
            out.push(Component {
                weight: weight / sum,
                mean,
                cov,
                sqrt_cov,
                log_norm,
            });
        }
        Ok(GaussianMixture {
            components: out,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// n i.i.d. draws, bit-reproducible for a fixed seed: component selection
    /// then a Gaussian draw through the covariance square root.
    pub fn sample(&self, n: usize, seed: u64) -> SampleBatch {
        assert!(n >= 1, "need at least one sample");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = DMatrix::zeros(n, self.dim);
        for i in 0..n {
            let row = self.draw_into(&mut rng);
            points.row_mut(i).copy_from(&row.transpose());
        }
        SampleBatch {
            points,
            seed,
            generator_id: "chacha8-selection-then-sqrtcov".to_string(),
        }
    }

    fn draw_into(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = self.components.len() - 1;
        for (j, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                chosen = j;
                break;
            }
        }
        let c = &self.components[chosen];
        let z = DVector::from_fn(self.dim, |_, _| standard_normal(rng));
        &c.mean + &c.sqrt_cov * z
    }

    /// Mixture density at `x`.
    pub fn pdf(&self, x: &DVector<f64>) -> Result<f64, MixtureError> {
        if x.len() != self.dim {
            return Err(MixtureError::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        let mut total = 0.0;
        for c in &self.components {
            if let Some((prec, log_c)) = &c.log_norm {
                let diff = x - &c.mean;
                let quad = (prec * &diff).dot(&diff);
                total += c.weight * (log_c - 0.5 * quad).exp();
            }
        }
        Ok(total)
    }

    /// Exact raw moment E[ξ^α] by the recursive multivariate Gaussian
    /// moment identity, mixed over components.
    pub fn raw_moment(&self, alpha: &MultiIndex) -> f64 {
        self.components
            .iter()
            .map(|c| c.weight * gaussian_raw_moment(&c.mean, &c.cov, &alpha.0))
            .sum()
    }
}

/// Box–Muller; two uniforms per normal keeps the draw count per sample fixed
/// so batches of different lengths share a prefix only when seeds differ.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// E[ξ^α] for ξ ~ N(μ, Σ) via the recursion
/// m(α) = μ_i·m(α−e_i) + Σ_k Σ_{ik}·(α_k − δ_{ik})·m(α−e_i−e_k).
fn gaussian_raw_moment(mean: &DVector<f64>, cov: &DMatrix<f64>, alpha: &[u32]) -> f64 {
    let mut memo: HashMap<Vec<u32>, f64> = HashMap::new();
    gaussian_raw_moment_rec(mean, cov, alpha.to_vec(), &mut memo)
}

fn gaussian_raw_moment_rec(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    alpha: Vec<u32>,
    memo: &mut HashMap<Vec<u32>, f64>,
) -> f64 {
    if alpha.iter().all(|&a| a == 0) {
        return 1.0;
    }
    if let Some(&v) = memo.get(&alpha) {
        return v;
    }
    let i = alpha.iter().position(|&a| a > 0).unwrap();
    let mut a1 = alpha.clone();
    a1[i] -= 1;
    let mut value = mean[i] * gaussian_raw_moment_rec(mean, cov, a1.clone(), memo);
    for k in 0..alpha.len() {
        let rem = a1[k]; // exponent of ξ_k in α − e_i
        if rem == 0 || cov[(i, k)] == 0.0 {
            continue;
        }
        let mut a2 = a1.clone();
        a2[k] -= 1;
        value += cov[(i, k)] * rem as f64 * gaussian_raw_moment_rec(mean, cov, a2, memo);
    }
    memo.insert(alpha, value);
    value
}

/// Capability consumed by basis construction: raw moments of some measure,
/// up to a degree cap.
pub trait MomentSource {
    fn raw_moment(&self, alpha: &MultiIndex) -> Result<f64, MixtureError>;
    fn dim(&self) -> usize;
}

/// Memoizing moment oracle over a [`GaussianMixture`] with a degree cap.
///
/// The default cap for an order-p pipeline is `4p + 2`: quadrature fitting
/// needs basis products up to degree 4p.
pub struct MomentOracle<'a> {
    gm: &'a GaussianMixture,
    max_degree: usize,
    cache: RefCell<HashMap<MultiIndex, f64>>,
}

impl<'a> MomentOracle<'a> {
    pub fn new(gm: &'a GaussianMixture, max_degree: usize) -> Self {
        MomentOracle {
            gm,
            max_degree,
            cache: RefCell::new(HashMap::new()),
        }
    }

    pub fn for_order(gm: &'a GaussianMixture, p: usize) -> Self {
        Self::new(gm, 4 * p + 2)
    }
}

impl MomentSource for MomentOracle<'_> {
    fn raw_moment(&self, alpha: &MultiIndex) -> Result<f64, MixtureError> {
        let degree = alpha.total_degree();
        if degree > self.max_degree {
            return Err(MixtureError::DegreeOverflow {
                degree,
                cap: self.max_degree,
            });
        }
        if let Some(&v) = self.cache.borrow().get(alpha) {
            return Ok(v);
        }
        let v = self.gm.raw_moment(alpha);
        self.cache.borrow_mut().insert(alpha.clone(), v);
        Ok(v)
    }

    fn dim(&self) -> usize {
        self.gm.dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub fn std_normal(d: usize) -> GaussianMixture {
        GaussianMixture::new(vec![(
            1.0,
            DVector::zeros(d),
            DMatrix::identity(d, d),
        )])
        .unwrap()
    }

    #[test]
    fn single_component_identity_is_valid() {
        let gm = std_normal(2);
        assert_eq!(gm.dim(), 2);
        assert_eq!(gm.components().len(), 1);
    }

    #[test]
    fn weight_sum_invalid() {
        let err = GaussianMixture::new(vec![
            (0.5, DVector::zeros(1), DMatrix::identity(1, 1)),
            (0.6, DVector::zeros(1), DMatrix::identity(1, 1)),
        ])
        .unwrap_err();
        assert!(matches!(err, MixtureError::WeightSumInvalid { .. }));
    }

    #[test]
    fn indefinite_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err =
            GaussianMixture::new(vec![(1.0, DVector::zeros(2), cov)]).unwrap_err();
        assert!(matches!(err, MixtureError::NonPsdCovariance { .. }));
    }

    #[test]
    fn rank_deficient_covariance_accepted() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let gm = GaussianMixture::new(vec![(1.0, DVector::zeros(2), cov)]).unwrap();
        let batch = gm.sample(1000, 3);
        for i in 0..1000 {
            assert_relative_eq!(batch.points[(i, 0)], batch.points[(i, 1)], epsilon = 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let gm = std_normal(2);
        let a = gm.sample(64, 42);
        let b = gm.sample(64, 42);
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn sample_moments_match_standard_normal() {
        let gm = std_normal(1);
        let batch = gm.sample(1_000_000, 42);
        let n = batch.points.nrows() as f64;
        let mean = batch.points.column(0).sum() / n;
        let var = batch.points.column(0).iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4e-3, "mean {mean}");
        assert!((var - 1.0).abs() < 1e-2, "var {var}");
    }

    #[test]
    fn component_selection_frequencies() {
        let gm = GaussianMixture::new(vec![
            (0.3, DVector::from_element(1, -10.0), DMatrix::identity(1, 1) * 0.01),
            (0.7, DVector::from_element(1, 10.0), DMatrix::identity(1, 1) * 0.01),
        ])
        .unwrap();
        let batch = gm.sample(1_000_000, 7);
        let frac = batch.points.column(0).iter().filter(|&&x| x < 0.0).count() as f64 / 1e6;
        assert!((frac - 0.3).abs() < 0.006, "fraction {frac}");
    }

    #[test]
    fn standard_normal_moments() {
        let gm = std_normal(1);
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![2])), 1.0, epsilon = 1e-14);
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![4])), 3.0, epsilon = 1e-14);
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![6])), 15.0, epsilon = 1e-12);
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![3])), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn shifted_gaussian_moments() {
        // E[ξ] = μ, E[ξ²] = μ² + σ²
        let gm = GaussianMixture::new(vec![(
            1.0,
            DVector::from_element(1, 2.0),
            DMatrix::from_element(1, 1, 0.25),
        )])
        .unwrap();
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![1])), 2.0, epsilon = 1e-14);
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![2])), 4.25, epsilon = 1e-14);
    }

    #[test]
    fn correlated_cross_moment() {
        // zero-mean Gaussian: E[ξ1 ξ2] = Σ12
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let gm = GaussianMixture::new(vec![(1.0, DVector::zeros(2), cov)]).unwrap();
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![1, 1])), 0.4, epsilon = 1e-14);
        // Isserlis: E[ξ1²ξ2²] = Σ11Σ22 + 2Σ12²
        assert_relative_eq!(gm.raw_moment(&MultiIndex(vec![2, 2])), 1.32, epsilon = 1e-13);
    }

    #[test]
    fn mixture_moment_matches_mc() {
        let gm = crate::scenario::default_obstacle_mixture();
        let alpha = MultiIndex(vec![1, 1]);
        let analytic = gm.raw_moment(&alpha);
        let n = 10_000_000usize;
        let batch = gm.sample(n, 2024);
        let vals: Vec<f64> = (0..n)
            .map(|i| batch.points[(i, 0)] * batch.points[(i, 1)])
            .collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (analytic - mean).abs() < 5.0 * se,
            "analytic {analytic} mc {mean} se {se}"
        );
    }

    #[test]
    fn moment_linear_in_weights() {
        let c1 = (DVector::from_element(1, 1.0), DMatrix::from_element(1, 1, 2.0));
        let c2 = (DVector::from_element(1, -0.5), DMatrix::from_element(1, 1, 0.5));
        let mix = GaussianMixture::new(vec![
            (0.25, c1.0.clone(), c1.1.clone()),
            (0.75, c2.0.clone(), c2.1.clone()),
        ])
        .unwrap();
        let g1 = GaussianMixture::new(vec![(1.0, c1.0, c1.1)]).unwrap();
        let g2 = GaussianMixture::new(vec![(1.0, c2.0, c2.1)]).unwrap();
        for deg in 0..=6u32 {
            let a = MultiIndex(vec![deg]);
            assert_relative_eq!(
                mix.raw_moment(&a),
                0.25 * g1.raw_moment(&a) + 0.75 * g2.raw_moment(&a),
                epsilon = 1e-11,
                max_relative = 1e-11
            );
        }
    }

    #[test]
    fn pdf_standard_normal_at_origin() {
        let gm = std_normal(1);
        let v = gm.pdf(&DVector::zeros(1)).unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn pdf_integrates_to_one() {
        let gm = crate::scenario::default_obstacle_mixture();
        // trapezoid grid over [-8, 8]^2
        let n = 400;
        let h = 16.0 / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = DVector::from_vec(vec![-8.0 + i as f64 * h, -8.0 + j as f64 * h]);
                let wi = if i == 0 || i == n { 0.5 } else { 1.0 };
                let wj = if j == 0 || j == n { 0.5 } else { 1.0 };
                total += wi * wj * gm.pdf(&x).unwrap();
            }
        }
        total *= h * h;
        assert!((total - 1.0).abs() < 1e-3, "integral {total}");
    }

    #[test]
    fn pdf_symmetric_mixture_at_symmetry_point() {
        let gm = GaussianMixture::new(vec![
            (0.5, DVector::from_element(1, -1.0), DMatrix::identity(1, 1)),
            (0.5, DVector::from_element(1, 1.0), DMatrix::identity(1, 1)),
        ])
        .unwrap();
        let at0 = gm.pdf(&DVector::zeros(1)).unwrap();
        let single = GaussianMixture::new(vec![(1.0, DVector::from_element(1, 1.0), DMatrix::identity(1, 1))])
            .unwrap()
            .pdf(&DVector::zeros(1))
            .unwrap();
        assert_relative_eq!(at0, single, epsilon = 1e-14);
    }

    #[test]
    fn oracle_degree_cap() {
        let gm = std_normal(1);
        let oracle = MomentOracle::new(&gm, 4);
        assert!(oracle.raw_moment(&MultiIndex(vec![4])).is_ok());
        assert!(matches!(
            oracle.raw_moment(&MultiIndex(vec![5])),
            Err(MixtureError::DegreeOverflow { .. })
        ));
    }
}
