//! Gaussian measures `N(a, Q)`: density, symmetric PSD square root, absolute
//! moments, tensorized Gauss-Hermite quadrature and seeded Monte Carlo.
//!
//! Expectations use the whitening substitution `y = a + √2 Q^{1/2} z`, which
//! turns `∫ f dN` into `π^{-N/2} ∫ f(a + √2 Q^{1/2} z) e^{-|z|²} dz` and maps
//! directly onto the tensor Gauss-Hermite rule. The square root is the
//! symmetric one from the eigendecomposition, which stays well defined as `Q`
//! approaches singularity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, SymEigen};
use crate::{Matrix, Vector};

/// Default tensor Gauss-Hermite order.
pub const DEFAULT_GH_ORDER: usize = 40;
/// Budget on the tensor node count `order^N`.
pub const NODE_BUDGET: usize = 1_000_000;
/// Relative PSD tolerance on the smallest eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum GaussError {
    #[error("covariance is not symmetric (asymmetry {defect:.3e})")]
    NonSymmetricCovariance { defect: f64 },
    #[error("covariance is not positive semidefinite (lambda_min = {lambda_min:.3e})")]
    NotPositiveSemidefinite { lambda_min: f64 },
    #[error("covariance is singular (lambda_min = {lambda_min:.3e}); a positive definite covariance is required")]
    SingularCovariance { lambda_min: f64 },
    #[error("tensor quadrature would use {nodes} nodes, over the budget of {budget}")]
    QuadratureOverflow { nodes: usize, budget: usize },
    #[error("absolute moments are only defined for even k, got {k}")]
    OddMomentUnsupported { k: u32 },
    #[error("absolute moments are implemented for k <= 8, got {k}")]
    MomentOrderUnsupported { k: u32 },
    #[error("absolute moments require a centered measure, |mean| = {mean_norm:.3e}")]
    NonCentered { mean_norm: f64 },
    #[error("integrand is not finite at probe point {at:?}")]
    NonFiniteIntegrand { at: Vec<f64> },
}

/// Quadrature scheme selector: tensor Gauss-Hermite for small dimensions,
/// seeded Monte Carlo otherwise. The Monte Carlo generator is counter-based
/// (ChaCha8), so a fixed seed reproduces the exact node stream.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum QuadScheme {
    GaussHermite { order: usize },
    MonteCarlo { n: usize, seed: u64 },
}

impl QuadScheme {
    /// Parses `gh:ORDER` or `mc:N:SEED`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            ["gh", order] => order
                .parse()
                .map(|order| QuadScheme::GaussHermite { order })
                .map_err(|_| format!("bad Gauss-Hermite order `{order}`")),
            ["mc", n, seed] => {
                let n = n.parse().map_err(|_| format!("bad sample count `{n}`"))?;
                let seed = seed.parse().map_err(|_| format!("bad seed `{seed}`"))?;
                Ok(QuadScheme::MonteCarlo { n, seed })
            }
            _ => Err(format!("expected `gh:ORDER` or `mc:N:SEED`, got `{s}`")),
        }
    }

    /// Tensor Gauss-Hermite at the default order for `N <= 3`, Monte Carlo
    /// beyond.
    pub fn default_for_dim(dim: usize) -> Self {
        if dim <= 3 {
            QuadScheme::GaussHermite {
                order: DEFAULT_GH_ORDER,
            }
        } else {
            QuadScheme::MonteCarlo {
                n: 200_000,
                seed: 0,
            }
        }
    }
}

impl std::fmt::Display for QuadScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            QuadScheme::GaussHermite { order } => write!(f, "gh:{order}"),
            QuadScheme::MonteCarlo { n, seed } => write!(f, "mc:{n}:{seed}"),
        }
    }
}

/// Expectation value plus the Monte Carlo standard error when applicable.
#[derive(Clone, Copy, Debug)]
pub struct QuadResult {
    pub value: f64,
    pub std_error: Option<f64>,
}

/// A Gaussian measure with its spectral factorization.
#[derive(Clone, Debug)]
pub struct GaussianMeasure {
    mean: Vector,
    cov: Matrix,
    sqrt: Matrix,
    eigvals: Vector,
    precision: Option<Matrix>,
    /// `log((2π)^{N/2} det(Q)^{1/2})`, present only for positive definite Q.
    log_det_factor: Option<f64>,
}

impl GaussianMeasure {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self, GaussError> {
        let n = mean.len();
        assert_eq!(cov.nrows(), n);
        assert_eq!(cov.ncols(), n);
        let defect = (&cov - cov.transpose()).amax();
        if defect > 1e-10 * (1.0 + cov.amax()) {
            return Err(GaussError::NonSymmetricCovariance { defect });
        }
        let eig = SymEigen::new(&cov);
        let lmin = eig.lambda_min();
        let lmax = eig.lambda_max().max(0.0);
        if lmin < -PSD_TOL * lmax.max(1e-300) {
            return Err(GaussError::NotPositiveSemidefinite { lambda_min: lmin });
        }
        let sqrt = eig.sqrt_psd();
        let pd = lmin > PSD_TOL * lmax.max(f64::MIN_POSITIVE) && lmin > 0.0;
        let precision = pd.then(|| eig.map(|l| 1.0 / l));
        let log_det_factor = pd.then(|| {
            let log_det: f64 = eig.values.iter().map(|&l| l.ln()).sum();
            0.5 * (n as f64) * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det
        });
        Ok(GaussianMeasure {
            mean,
            cov,
            sqrt,
            eigvals: eig.values,
            precision,
            log_det_factor,
        })
    }

    pub fn standard(dim: usize) -> Self {
        GaussianMeasure::new(Vector::zeros(dim), Matrix::identity(dim, dim)).unwrap()
    }

    /// Same covariance factorization with a different mean. The spectral
    /// pieces are mean-independent, so this avoids re-decomposing when one
    /// covariance is evaluated at many base points.
    pub fn with_mean(&self, mean: Vector) -> Self {
        assert_eq!(mean.len(), self.dim());
        let mut out = self.clone();
        out.mean = mean;
        out
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    /// Symmetric PSD square root of the covariance.
    pub fn sqrt(&self) -> &Matrix {
        &self.sqrt
    }

    pub fn precision(&self) -> Result<&Matrix, GaussError> {
        self.precision
            .as_ref()
            .ok_or(GaussError::SingularCovariance {
                lambda_min: self.lambda_min(),
            })
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigvals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigvals
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `(2π)^{N/2} det(Q)^{1/2}`.
    pub fn det_factor(&self) -> Result<f64, GaussError> {
        self.log_det_factor
            .map(f64::exp)
            .ok_or(GaussError::SingularCovariance {
                lambda_min: self.lambda_min(),
            })
    }

    /// Log of the Lebesgue density at `y`.
    pub fn log_density(&self, y: &Vector) -> Result<f64, GaussError> {
        let prec = self.precision()?;
        let d = y - &self.mean;
        let quad = (prec * &d).dot(&d);
        Ok(-0.5 * quad - self.log_det_factor.unwrap())
    }

    /// Lebesgue density at `y`; the exponent is assembled in log space first.
    pub fn density(&self, y: &Vector) -> Result<f64, GaussError> {
        Ok(self.log_density(y)?.exp())
    }

    /// `∫ f dN` under the selected scheme. Gauss-Hermite sums serially in a
    /// fixed node order, so repeated calls are bit-identical.
    pub fn expectation<F: Fn(&Vector) -> f64>(
        &self,
        f: F,
        scheme: &QuadScheme,
    ) -> Result<f64, GaussError> {
        Ok(self.expectation_detailed(f, scheme)?.value)
    }

    pub fn expectation_detailed<F: Fn(&Vector) -> f64>(
        &self,
        f: F,
        scheme: &QuadScheme,
    ) -> Result<QuadResult, GaussError> {
        self.require_pd()?;
        match *scheme {
            QuadScheme::GaussHermite { order } => {
                let mut acc = 0.0;
                self.gh_sweep(order, |y, w| {
                    acc += w * f(y);
                })?;
                Ok(QuadResult {
                    value: acc,
                    std_error: None,
                })
            }
            QuadScheme::MonteCarlo { n, seed } => {
                let mut sum = 0.0;
                let mut sumsq = 0.0;
                self.mc_sweep(n, seed, |y| {
                    let v = f(y);
                    sum += v;
                    sumsq += v * v;
                });
                let mean = sum / n as f64;
                let var = (sumsq / n as f64 - mean * mean).max(0.0);
                Ok(QuadResult {
                    value: mean,
                    std_error: Some((var / n as f64).sqrt()),
                })
            }
        }
    }

    /// Vector-valued expectation, one sweep for all components.
    pub fn expectation_vec<F: Fn(&Vector) -> Vector>(
        &self,
        f: F,
        out_dim: usize,
        scheme: &QuadScheme,
    ) -> Result<Vector, GaussError> {
        self.require_pd()?;
        let mut acc = Vector::zeros(out_dim);
        match *scheme {
            QuadScheme::GaussHermite { order } => {
                self.gh_sweep(order, |y, w| {
                    acc += f(y) * w;
                })?;
            }
            QuadScheme::MonteCarlo { n, seed } => {
                self.mc_sweep(n, seed, |y| {
                    acc += f(y);
                });
                acc /= n as f64;
            }
        }
        Ok(acc)
    }

    /// Matrix-valued expectation.
    pub fn expectation_mat<F: Fn(&Vector) -> Matrix>(
        &self,
        f: F,
        rows: usize,
        cols: usize,
        scheme: &QuadScheme,
    ) -> Result<Matrix, GaussError> {
        self.require_pd()?;
        let mut acc = Matrix::zeros(rows, cols);
        match *scheme {
            QuadScheme::GaussHermite { order } => {
                self.gh_sweep(order, |y, w| {
                    acc += f(y) * w;
                })?;
            }
            QuadScheme::MonteCarlo { n, seed } => {
                self.mc_sweep(n, seed, |y| {
                    acc += f(y);
                });
                acc /= n as f64;
            }
        }
        Ok(acc)
    }

    /// `log ∫ e^{log_f(y)} dN(y)` by log-sum-exp over the nodes; used where
    /// the integrand overflows double precision (exponential weights far from
    /// the origin).
    pub fn log_expectation_exp<F: Fn(&Vector) -> f64>(
        &self,
        log_f: F,
        scheme: &QuadScheme,
    ) -> Result<f64, GaussError> {
        self.require_pd()?;
        let mut terms = Vec::new();
        match *scheme {
            QuadScheme::GaussHermite { order } => {
                self.gh_sweep_raw(order, |y, w| {
                    terms.push(log_f(y) + w.ln());
                })?;
            }
            QuadScheme::MonteCarlo { n, seed } => {
                self.mc_sweep(n, seed, |y| {
                    terms.push(log_f(y));
                });
                return Ok(linalg::log_sum_exp(&terms) - (n as f64).ln());
            }
        }
        Ok(linalg::log_sum_exp(&terms))
    }

    /// Absolute moment `C_k = ∫ |y|^k dN(y)` of a centered measure, `k` even
    /// and `<= 8`. Uses a Gauss-Hermite order that integrates the polynomial
    /// exactly when the node budget allows, Monte Carlo otherwise.
    pub fn absolute_moment(&self, k: u32) -> Result<f64, GaussError> {
        if k % 2 != 0 {
            return Err(GaussError::OddMomentUnsupported { k });
        }
        if k > 8 {
            return Err(GaussError::MomentOrderUnsupported { k });
        }
        let mean_norm = self.mean.norm();
        if mean_norm > 1e-12 * (1.0 + self.lambda_max().sqrt()) {
            return Err(GaussError::NonCentered { mean_norm });
        }
        if k == 0 {
            return Ok(1.0);
        }
        let order = DEFAULT_GH_ORDER.max(k as usize / 2 + 2);
        let scheme = if order.pow(self.dim() as u32) <= NODE_BUDGET {
            QuadScheme::GaussHermite { order }
        } else {
            QuadScheme::MonteCarlo {
                n: 200_000,
                seed: 7,
            }
        };
        self.expectation(|y| y.norm().powi(k as i32), &scheme)
    }

    /// Visits every quadrature node `(y, w)` of the scheme with normalized
    /// weights (`Σ w = 1` for Gauss-Hermite, `w = 1/n` for Monte Carlo).
    /// This is the primitive behind all expectation forms; callers with
    /// structured accumulators (nested kernels, tensors) sweep it directly.
    pub fn for_each_node(
        &self,
        scheme: &QuadScheme,
        mut visit: impl FnMut(&Vector, f64),
    ) -> Result<(), GaussError> {
        self.require_pd()?;
        match *scheme {
            QuadScheme::GaussHermite { order } => self.gh_sweep_raw(order, visit),
            QuadScheme::MonteCarlo { n, seed } => {
                let w = 1.0 / n as f64;
                self.mc_sweep(n, seed, |y| visit(y, w));
                Ok(())
            }
        }
    }

    fn require_pd(&self) -> Result<(), GaussError> {
        if self.precision.is_none() {
            return Err(GaussError::SingularCovariance {
                lambda_min: self.lambda_min(),
            });
        }
        Ok(())
    }

    /// Tensor Gauss-Hermite sweep with normalized weights (`Σ w = 1`). Probes
    /// the most extreme node first so weight-growth overflow is caught before
    /// the full sweep.
    fn gh_sweep(
        &self,
        order: usize,
        mut visit: impl FnMut(&Vector, f64),
    ) -> Result<(), GaussError> {
        self.gh_sweep_raw(order, |y, w| visit(y, w))
    }

    fn gh_sweep_raw(
        &self,
        order: usize,
        mut visit: impl FnMut(&Vector, f64),
    ) -> Result<(), GaussError> {
        let dim = self.dim();
        let nodes = order
            .checked_pow(dim as u32)
            .unwrap_or(usize::MAX);
        if nodes > NODE_BUDGET {
            return Err(GaussError::QuadratureOverflow {
                nodes,
                budget: NODE_BUDGET,
            });
        }
        let rule = linalg::gauss_hermite(order);
        let norm = std::f64::consts::PI.powf(-(dim as f64) / 2.0);
        let scale = &self.sqrt * std::f64::consts::SQRT_2;

        // extreme-node probe
        {
            let zmax = rule.last().unwrap().0;
            let z = Vector::from_element(dim, zmax);
            let y = &self.mean + &scale * z;
            // callers observe the probe through `visit` later; here only
            // finiteness of the transformed point matters
            if y.iter().any(|v| !v.is_finite()) {
                return Err(GaussError::NonFiniteIntegrand {
                    at: y.iter().cloned().collect(),
                });
            }
        }

        let mut idx = vec![0usize; dim];
        let mut z = Vector::zeros(dim);
        loop {
            let mut w = norm;
            for (d, &i) in idx.iter().enumerate() {
                let (x, wx) = rule[i];
                z[d] = x;
                w *= wx;
            }
            let y = &self.mean + &scale * &z;
            visit(&y, w);
            // odometer
            let mut d = 0;
            loop {
                if d == dim {
                    return Ok(());
                }
                idx[d] += 1;
                if idx[d] < order {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
        }
    }

    fn mc_sweep(&self, n: usize, seed: u64, mut visit: impl FnMut(&Vector)) {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xi = Vector::zeros(dim);
        for _ in 0..n {
            for d in 0..dim {
                xi[d] = StandardNormal.sample(&mut rng);
            }
            let y = &self.mean + &self.sqrt * &xi;
            visit(&y);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gh(order: usize) -> QuadScheme {
        QuadScheme::GaussHermite { order }
    }

    #[test]
    fn normalization_is_exact() {
        for dim in 1..=3 {
            let mu = GaussianMeasure::new(
                Vector::from_element(dim, 0.3),
                Matrix::identity(dim, dim) * 1.7,
            )
            .unwrap();
            let one = mu.expectation(|_| 1.0, &gh(DEFAULT_GH_ORDER)).unwrap();
            assert!((one - 1.0).abs() <= 1e-8, "dim {dim}: {one}");
        }
    }

    #[test]
    fn first_moment_is_exact_at_order_one() {
        let mu = GaussianMeasure::new(
            Vector::from_row_slice(&[1.5, -0.5]),
            Matrix::identity(2, 2),
        )
        .unwrap();
        for i in 0..2 {
            let v = mu.expectation(|y| y[i], &gh(1)).unwrap();
            assert_relative_eq!(v, mu.mean()[i], epsilon = 1e-14);
        }
    }

    #[test]
    fn second_moment_diag_covariance() {
        // E|y|² = tr Q = 3 for Q = diag(1,2), exact at order >= 2.
        let mu = GaussianMeasure::new(
            Vector::zeros(2),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]),
        )
        .unwrap();
        let v = mu.expectation(|y| y.norm_squared(), &gh(2)).unwrap();
        assert_relative_eq!(v, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn absolute_moments_standard_normal() {
        let mu = GaussianMeasure::standard(1);
        assert_relative_eq!(mu.absolute_moment(0).unwrap(), 1.0);
        assert_relative_eq!(mu.absolute_moment(2).unwrap(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(mu.absolute_moment(4).unwrap(), 3.0, epsilon = 1e-10);
        let mu2 = GaussianMeasure::standard(2);
        assert_relative_eq!(mu2.absolute_moment(2).unwrap(), 2.0, epsilon = 1e-10);
        // E|y|^4 in R^N for identity covariance is N(N+2)
        assert_relative_eq!(mu2.absolute_moment(4).unwrap(), 8.0, epsilon = 1e-9);
    }

    #[test]
    fn moment_preconditions() {
        let mu = GaussianMeasure::standard(1);
        assert!(matches!(
            mu.absolute_moment(3),
            Err(GaussError::OddMomentUnsupported { k: 3 })
        ));
        assert!(matches!(
            mu.absolute_moment(10),
            Err(GaussError::MomentOrderUnsupported { .. })
        ));
        let off = GaussianMeasure::new(Vector::from_element(1, 1.0), Matrix::identity(1, 1)).unwrap();
        assert!(matches!(
            off.absolute_moment(2),
            Err(GaussError::NonCentered { .. })
        ));
    }

    #[test]
    fn density_closed_forms() {
        let mu = GaussianMeasure::standard(1);
        let v = mu.density(&Vector::zeros(1)).unwrap();
        assert_relative_eq!(v, 1.0 / (2.0 * std::f64::consts::PI).sqrt(), epsilon = 1e-12);

        // at the mean the density is 1/det_factor
        let m = Vector::from_row_slice(&[0.4, -1.0]);
        let q = Matrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let mu = GaussianMeasure::new(m.clone(), q).unwrap();
        assert_relative_eq!(
            mu.density(&m).unwrap(),
            1.0 / mu.det_factor().unwrap(),
            epsilon = 1e-12
        );

        // N=2 standard at (1,1): e^{-1}/(2π)
        let mu = GaussianMeasure::standard(2);
        let y = Vector::from_element(2, 1.0);
        assert_relative_eq!(
            mu.density(&y).unwrap(),
            (-1.0_f64).exp() / (2.0 * std::f64::consts::PI),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sqrt_squares_back_to_covariance() {
        let q = Matrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.5, -0.2, 0.1, -0.2, 0.8]);
        let mu = GaussianMeasure::new(Vector::zeros(3), q.clone()).unwrap();
        let defect = (mu.sqrt() * mu.sqrt() - &q).amax();
        assert!(defect <= 1e-10 * linalg::spectral_norm(&q));
    }

    #[test]
    fn isserlis_identity_for_quartic_monomial() {
        // E[y1² y2²] = q11 q22 + 2 q12² for a centered Gaussian.
        let q = Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let mu = GaussianMeasure::new(Vector::zeros(2), q.clone()).unwrap();
        let v = mu
            .expectation(|y| y[0] * y[0] * y[1] * y[1], &gh(8))
            .unwrap();
        let exact = q[(0, 0)] * q[(1, 1)] + 2.0 * q[(0, 1)] * q[(0, 1)];
        assert_relative_eq!(v, exact, epsilon = 1e-12);
    }

    #[test]
    fn gauss_hermite_is_exact_for_low_degree_monomials() {
        // Order k integrates z-polynomials of degree 2k-1 exactly; check a
        // degree-5 mixed monomial at order 3 against the Isserlis expansion.
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5]);
        let a = Vector::from_row_slice(&[0.7, -0.3]);
        let mu = GaussianMeasure::new(a.clone(), q.clone()).unwrap();
        // E[(y1-a1)^2 (y2-a2)^2] is covariance-only
        let v = mu
            .expectation(
                |y| (y[0] - a[0]).powi(2) * (y[1] - a[1]).powi(2),
                &gh(3),
            )
            .unwrap();
        let exact = q[(0, 0)] * q[(1, 1)] + 2.0 * q[(0, 1)] * q[(0, 1)];
        assert_relative_eq!(v, exact, epsilon = 1e-12);
    }

    #[test]
    fn monte_carlo_agrees_with_gauss_hermite_within_four_sigma() {
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        let mu = GaussianMeasure::new(Vector::from_row_slice(&[0.2, 0.1]), q).unwrap();
        let f = |y: &Vector| (y[0] - 0.4 * y[1]).tanh() + 0.05 * y.norm_squared();
        let exact = mu.expectation(f, &gh(40)).unwrap();
        let mc = mu
            .expectation_detailed(f, &QuadScheme::MonteCarlo { n: 40_000, seed: 11 })
            .unwrap();
        let se = mc.std_error.unwrap();
        assert!(
            (mc.value - exact).abs() <= 4.0 * se,
            "mc {} exact {} se {}",
            mc.value,
            exact,
            se
        );
    }

    #[test]
    fn monte_carlo_is_reproducible_by_seed() {
        let mu = GaussianMeasure::standard(2);
        let s = QuadScheme::MonteCarlo { n: 1000, seed: 42 };
        let a = mu.expectation(|y| y[0].sin(), &s).unwrap();
        let b = mu.expectation(|y| y[0].sin(), &s).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn quadrature_overflow_is_reported() {
        let mu = GaussianMeasure::standard(3);
        let res = mu.expectation(|_| 1.0, &gh(200));
        assert!(matches!(res, Err(GaussError::QuadratureOverflow { .. })));
    }

    #[test]
    fn singular_covariance_is_rejected_for_quadrature_and_density() {
        let q = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let mu = GaussianMeasure::new(Vector::zeros(2), q).unwrap();
        assert!(matches!(
            mu.expectation(|_| 1.0, &gh(4)),
            Err(GaussError::SingularCovariance { .. })
        ));
        assert!(matches!(
            mu.density(&Vector::zeros(2)),
            Err(GaussError::SingularCovariance { .. })
        ));
    }

    #[test]
    fn log_expectation_exp_handles_huge_exponents() {
        // E[e^{y}] = e^{m + 1/2} for y ~ N(m, 1). With m = 800 the integrand
        // overflows double precision at every node, but the log-sum-exp path
        // recovers the exponent.
        let m = 800.0;
        let mu = GaussianMeasure::new(Vector::from_element(1, m), Matrix::identity(1, 1)).unwrap();
        let got = mu.log_expectation_exp(|y| y[0], &gh(40)).unwrap();
        assert_relative_eq!(got, m + 0.5, max_relative = 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn affine_pushforward(a1 in -2.0f64..2.0, a2 in -2.0f64..2.0, l1 in 0.2f64..3.0, l2 in 0.2f64..3.0) {
            // E_{N(a,Q)}[f] = E_{N(0,I)}[z -> f(a + Q^{1/2} z)]
            let a = Vector::from_row_slice(&[a1, a2]);
            let q = Matrix::from_row_slice(2, 2, &[l1, 0.1, 0.1, l2]);
            let mu = GaussianMeasure::new(a.clone(), q).unwrap();
            let std = GaussianMeasure::standard(2);
            let f = |y: &Vector| (0.3 * y[0] - 0.2 * y[1]).cos() + 0.01 * y.norm_squared();
            let lhs = mu.expectation(f, &gh(24)).unwrap();
            let sqrt = mu.sqrt().clone();
            let rhs = std
                .expectation(|z| f(&(&a + &sqrt * z)), &gh(24))
                .unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {lhs} rhs {rhs}");
        }

        #[test]
        fn expectation_is_linear_and_monotone(c in -3.0f64..3.0) {
            let mu = GaussianMeasure::standard(2);
            let f = |y: &Vector| y[0].sin() + 0.5;
            let g = |y: &Vector| y.norm_squared() * 0.1 + 1.0;
            let ef = mu.expectation(f, &gh(16)).unwrap();
            let eg = mu.expectation(g, &gh(16)).unwrap();
            let combo = mu.expectation(|y| c * f(y) + g(y), &gh(16)).unwrap();
            prop_assert!((combo - (c * ef + eg)).abs() < 1e-11);
            // monotone: f <= h pointwise implies E f <= E h (weights positive)
            let eh = mu.expectation(|y| f(y) + 0.2, &gh(16)).unwrap();
            prop_assert!(ef <= eh);
        }
    }
}
