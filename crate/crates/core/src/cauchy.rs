//! The nonhomogeneous backward Cauchy problem with terminal datum `φ` and
//! running source `f`, in the stochastic-representation sign convention
//!
//! ```text
//! D_s u(s,x) + L(s) u(s,x) + f(s,x) = 0,   s ∈ [a, T),   u(T,·) = φ,
//! ```
//!
//! solved by the mild-solution formula
//! `u(s,x) = P_{s,T} φ(x) + ∫_s^T P_{s,r} f(r,·)(x) dr`
//! (differentiating the integral in `s` produces `-f - L u`, so the source
//! enters the equation with a plus sign).
//!
//! The time integral is composite Gauss-Legendre on a mesh graded
//! geometrically (ratio 2) toward `r = s`: second-derivative integrands blow
//! up like a negative fractional power of `r - s` for rough sources, and
//! geometric grading equidistributes the panel error. The smallest panel
//! stays above the evolution module's derivative floor.
//!
//! Residuals use analytic-in-space derivatives from the smoothing kernels and
//! a centered difference only in `s`, so the `s`-difference is the sole
//! consistency error on smooth data.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::coeffs::CoefficientModel;
use crate::evolution::{EvolutionError, EvolutionOperator};
use crate::gaussmeasure::QuadScheme;
use crate::linalg::{self, multi_indices};
use crate::weights::{self, WeightSpec, WeightedFunction, WeightsError};
use crate::{Matrix, Vector};

#[derive(Debug, Error)]
pub enum CauchyError {
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("time interval [{a}, {t_end}] is empty or outside the model domain")]
    BadInterval { a: f64, t_end: f64 },
    #[error("the graded time mesh cannot keep its smallest panel above the singularity floor {floor:.1e} on an interval of length {len:.3e}")]
    SingularityBudgetExceeded { floor: f64, len: f64 },
    #[error("solution grid is empty")]
    EmptyGrid,
}

/// A time-dependent source with per-time weighted-function access.
#[derive(Clone)]
pub struct SourceField {
    f: Arc<dyn Fn(f64, &Vector) -> f64 + Send + Sync>,
    weight: WeightSpec,
    dim: usize,
}

impl SourceField {
    pub fn new(
        weight: WeightSpec,
        dim: usize,
        f: impl Fn(f64, &Vector) -> f64 + Send + Sync + 'static,
    ) -> Self {
        SourceField {
            f: Arc::new(f),
            weight,
            dim,
        }
    }

    pub fn eval(&self, s: f64, x: &Vector) -> f64 {
        (self.f)(s, x)
    }

    /// The slice `f(s, ·)` as a weighted function.
    pub fn at(&self, s: f64) -> WeightedFunction {
        let f = self.f.clone();
        WeightedFunction::new(self.weight, move |x: &Vector| f(s, x)).with_dim(self.dim)
    }
}

/// Problem data: terminal datum `φ` of class `C_p^{2+θ}`, source `f`, the
/// interval `[a, T]` and the Hölder index `θ ∈ (0, 1)`.
#[derive(Clone)]
pub struct CauchyProblem {
    pub model: CoefficientModel,
    pub weight: WeightSpec,
    pub a: f64,
    pub t_end: f64,
    pub phi: WeightedFunction,
    pub source: Option<SourceField>,
    pub theta: f64,
}

impl CauchyProblem {
    pub fn homogeneous(
        model: CoefficientModel,
        weight: WeightSpec,
        a: f64,
        t_end: f64,
        phi: WeightedFunction,
        theta: f64,
    ) -> Self {
        CauchyProblem {
            model,
            weight,
            a,
            t_end,
            phi,
            source: None,
            theta,
        }
    }
}

/// Space-time grid plus the numerical controls of the solver.
#[derive(Clone)]
pub struct SolveGrid {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    /// Centered-difference step for the `s`-derivative in residuals.
    pub h_s: f64,
    /// Gauss-Legendre nodes per panel of the graded `r`-mesh.
    pub gl_order: usize,
    /// Maximum number of geometric refinements toward `r = s`.
    pub max_refinements: u32,
    pub scheme: QuadScheme,
    pub flow_tol: f64,
    pub with_derivatives: bool,
}

impl SolveGrid {
    pub fn new(times: Vec<f64>, points: Vec<Vector>) -> Self {
        SolveGrid {
            times,
            points,
            h_s: 0.02,
            gl_order: 6,
            max_refinements: 12,
            scheme: QuadScheme::GaussHermite { order: 40 },
            flow_tol: crate::flow::DEFAULT_TOL,
            with_derivatives: true,
        }
    }

    pub fn with_h_s(mut self, h_s: f64) -> Self {
        self.h_s = h_s;
        self
    }

    pub fn with_scheme(mut self, scheme: QuadScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn without_derivatives(mut self) -> Self {
        self.with_derivatives = false;
        self
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveDiagnostics {
    pub h_s: f64,
    pub gl_order: usize,
    pub max_refinements: u32,
    pub quad: String,
    pub flow_tol: f64,
    /// `10 (h_s² + quadrature tolerance)`: the scale the residual is judged
    /// against for smooth data.
    pub consistency_scale: f64,
    pub warnings: Vec<String>,
}

/// The assembled solution on its grid, immutable once built.
#[derive(Clone)]
pub struct MildSolution {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    /// `values[i][j] = u(times[i], points[j])`.
    pub values: Vec<Vec<f64>>,
    pub gradients: Option<Vec<Vec<Vector>>>,
    pub hessians: Option<Vec<Vec<Matrix>>>,
    /// Interior times where the PDE residual was sampled.
    pub interior_times: Vec<f64>,
    /// `residuals[k][j]` = |Δ_s u + L(s) u + f| at `(interior_times[k], points[j])`.
    pub residuals: Vec<Vec<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl MildSolution {
    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .flatten()
            .cloned()
            .fold(0.0, f64::max)
    }
}

/// The generator applied to a function with derivatives:
/// `L(s)ψ(x) = ½ Tr[Q(s) D²ψ(x)] + <A(s)x + h(s), Dψ(x)>`.
pub fn apply_l(
    model: &CoefficientModel,
    s: f64,
    psi: &WeightedFunction,
    x: &Vector,
) -> Result<f64, CauchyError> {
    let q = model.q(s).map_err(crate::flow::FlowError::from).map_err(EvolutionError::from)?;
    let a = model.a(s).map_err(crate::flow::FlowError::from).map_err(EvolutionError::from)?;
    let h = model.h(s).map_err(crate::flow::FlowError::from).map_err(EvolutionError::from)?;
    let hess = psi.hess(x);
    let grad = psi.grad(x);
    let drift = a * x + h;
    Ok(0.5 * (q * hess).trace() + drift.dot(&grad))
}

fn apply_l_parts(
    model: &CoefficientModel,
    s: f64,
    grad: &Vector,
    hess: &Matrix,
    x: &Vector,
) -> f64 {
    let q = model.q_unchecked(s);
    let a = model.a_unchecked(s);
    let h = model.h_unchecked(s);
    let drift = a * x + h;
    0.5 * (q * hess).trace() + drift.dot(grad)
}

/// Pointwise evaluator of the mild solution and its spatial derivatives.
/// Shares one evolution operator (and its flow cache) across all grid work.
pub struct MildEvaluator {
    problem: CauchyProblem,
    op: EvolutionOperator,
    gl_order: usize,
    max_refinements: u32,
}

impl MildEvaluator {
    pub fn new(problem: CauchyProblem, grid: &SolveGrid) -> Result<Self, CauchyError> {
        let (lo, hi) = problem.model.time_domain();
        if !(problem.a < problem.t_end) || problem.a < lo || problem.t_end > hi {
            return Err(CauchyError::BadInterval {
                a: problem.a,
                t_end: problem.t_end,
            });
        }
        let op = EvolutionOperator::new(problem.model.clone(), problem.weight, grid.scheme)
            .with_flow_tol(grid.flow_tol);
        // split derivatives integrate pre-smoothed inner fields on their
        // outer level; a coarser rule there loses nothing measurable
        let op = match grid.scheme {
            QuadScheme::GaussHermite { order } if order > 24 => op.with_outer_order(24),
            _ => op,
        };
        Ok(MildEvaluator {
            problem,
            op,
            gl_order: grid.gl_order,
            max_refinements: grid.max_refinements,
        })
    }

    pub fn operator(&self) -> &EvolutionOperator {
        &self.op
    }

    pub fn problem(&self) -> &CauchyProblem {
        &self.problem
    }

    /// Graded panel boundaries of `[s, T]`: the panel adjacent to `s` is
    /// halved `K` times, with `K` capped so the smallest panel times the
    /// smallest Gauss-Legendre node stays above the derivative floor.
    fn panels(&self, s: f64) -> Result<Vec<(f64, f64)>, CauchyError> {
        let t_end = self.problem.t_end;
        let len = t_end - s;
        if len <= 0.0 {
            return Ok(Vec::new());
        }
        let floor = self.op.delta_floor();
        let rule = linalg::gauss_legendre(self.gl_order);
        let xi_min = 0.5 * (rule[0].0 + 1.0); // smallest node within a panel
        let w_min = floor / xi_min;
        if len <= w_min {
            return Err(CauchyError::SingularityBudgetExceeded { floor, len });
        }
        let k_max = ((len / w_min).log2().floor() as i64).max(0) as u32;
        let k = self.max_refinements.min(k_max);
        let mut bounds = Vec::with_capacity(k as usize + 2);
        bounds.push(s);
        for j in (0..=k).rev() {
            bounds.push(s + len / (2.0_f64).powi(j as i32));
        }
        Ok(bounds.windows(2).map(|w| (w[0], w[1])).collect())
    }

    /// `u(s, x)`.
    pub fn value(&self, s: f64, x: &Vector) -> Result<f64, CauchyError> {
        let mut u = self.op.apply(&self.problem.phi, s, self.problem.t_end, x)?;
        if let Some(src) = &self.problem.source {
            let rule = linalg::gauss_legendre(self.gl_order);
            for (p_lo, p_hi) in self.panels(s)? {
                let half = 0.5 * (p_hi - p_lo);
                let mid = 0.5 * (p_lo + p_hi);
                for &(xi, w) in rule.iter() {
                    let r = mid + half * xi;
                    u += w * half * self.op.apply(&src.at(r), s, r, x)?;
                }
            }
        }
        Ok(u)
    }

    /// `∇u(s, x)` through the smoothing kernels; at `s = T` this is the
    /// gradient of the terminal datum itself.
    pub fn gradient(&self, s: f64, x: &Vector) -> Result<Vector, CauchyError> {
        let mut g = if s >= self.problem.t_end {
            self.problem.phi.grad(x)
        } else {
            self.op
                .gradient(&self.problem.phi, s, self.problem.t_end, x)?
        };
        if let Some(src) = &self.problem.source {
            let rule = linalg::gauss_legendre(self.gl_order);
            for (p_lo, p_hi) in self.panels(s)? {
                let half = 0.5 * (p_hi - p_lo);
                let mid = 0.5 * (p_lo + p_hi);
                for &(xi, w) in rule.iter() {
                    let r = mid + half * xi;
                    g += self.op.gradient(&src.at(r), s, r, x)? * (w * half);
                }
            }
        }
        Ok(g)
    }

    /// `D²u(s, x)` through the split kernels; at `s = T` this is the Hessian
    /// of the terminal datum itself.
    pub fn hessian(&self, s: f64, x: &Vector) -> Result<Matrix, CauchyError> {
        let mut h = if s >= self.problem.t_end {
            self.problem.phi.hess(x)
        } else {
            self.op
                .hessian(&self.problem.phi, s, self.problem.t_end, x)?
        };
        if let Some(src) = &self.problem.source {
            let rule = linalg::gauss_legendre(self.gl_order);
            for (p_lo, p_hi) in self.panels(s)? {
                let half = 0.5 * (p_hi - p_lo);
                let mid = 0.5 * (p_lo + p_hi);
                for &(xi, w) in rule.iter() {
                    let r = mid + half * xi;
                    h += self.op.hessian(&src.at(r), s, r, x)? * (w * half);
                }
            }
        }
        Ok(h)
    }

    /// PDE residual `|Δ_s u + L(s)u + f|` at one interior point, with the
    /// centered `s`-difference of step `h_s` and kernel spatial derivatives.
    pub fn residual_at(&self, s: f64, x: &Vector, h_s: f64) -> Result<f64, CauchyError> {
        let up = self.value(s + h_s, x)?;
        let um = self.value(s - h_s, x)?;
        let ds = (up - um) / (2.0 * h_s);
        let grad = self.gradient(s, x)?;
        let hess = self.hessian(s, x)?;
        let lu = apply_l_parts(&self.problem.model, s, &grad, &hess, x);
        let f = self
            .problem
            .source
            .as_ref()
            .map(|src| src.eval(s, x))
            .unwrap_or(0.0);
        Ok((ds + lu + f).abs())
    }
}

/// Solves the problem on the grid. With `source = None` this is exactly the
/// homogeneous path `u = P_{·,T} φ`.
pub fn solve(problem: &CauchyProblem, grid: &SolveGrid) -> Result<MildSolution, CauchyError> {
    if grid.times.is_empty() || grid.points.is_empty() {
        return Err(CauchyError::EmptyGrid);
    }
    let eval = MildEvaluator::new(problem.clone(), grid)?;
    let mut warnings = Vec::new();
    if matches!(problem.weight, WeightSpec::Exponential { .. }) {
        if let Some(worst) = drift_definiteness_violation(problem) {
            warnings.push(format!(
                "exponential weight: A(s) is not negative definite on [a, T] \
                 (max symmetric-part eigenvalue {worst:.3e}); proceeding anyway"
            ));
        }
    }

    let values: Vec<Vec<f64>> = grid
        .times
        .par_iter()
        .map(|&s| {
            grid.points
                .iter()
                .map(|x| eval.value(s, x))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    let (gradients, hessians) = if grid.with_derivatives {
        let g: Vec<Vec<Vector>> = grid
            .times
            .par_iter()
            .map(|&s| {
                grid.points
                    .iter()
                    .map(|x| eval.gradient(s, x))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        let h: Vec<Vec<Matrix>> = grid
            .times
            .par_iter()
            .map(|&s| {
                grid.points
                    .iter()
                    .map(|x| eval.hessian(s, x))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<_, _>>()?;
        (Some(g), Some(h))
    } else {
        (None, None)
    };

    // Residuals on times whose centered difference stays inside [a, T] and
    // whose kernels stay above the floor.
    let interior_times: Vec<f64> = grid
        .times
        .iter()
        .cloned()
        .filter(|&s| {
            s - grid.h_s >= problem.a
                && s + grid.h_s <= problem.t_end
                && problem.t_end - s >= eval.op.delta_floor() * 4.0
        })
        .collect();
    let residuals: Vec<Vec<f64>> = interior_times
        .par_iter()
        .map(|&s| {
            grid.points
                .iter()
                .map(|x| eval.residual_at(s, x, grid.h_s))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    Ok(MildSolution {
        times: grid.times.clone(),
        points: grid.points.clone(),
        values,
        gradients,
        hessians,
        interior_times,
        residuals,
        diagnostics: SolveDiagnostics {
            h_s: grid.h_s,
            gl_order: grid.gl_order,
            max_refinements: grid.max_refinements,
            quad: grid.scheme.to_string(),
            flow_tol: grid.flow_tol,
            consistency_scale: 10.0 * (grid.h_s * grid.h_s + 1e-8),
            warnings,
        },
    })
}

/// Solves the homogeneous problem (`f ≡ 0`).
pub fn solve_homogeneous(
    problem: &CauchyProblem,
    grid: &SolveGrid,
) -> Result<MildSolution, CauchyError> {
    let mut p = problem.clone();
    p.source = None;
    solve(&p, grid)
}

/// Largest residual over the stored interior grid.
pub fn residual(ms: &MildSolution) -> f64 {
    ms.max_residual()
}

fn drift_definiteness_violation(problem: &CauchyProblem) -> Option<f64> {
    let n = 64;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..n {
        let s = problem.a + (problem.t_end - problem.a) * (i as f64) / ((n - 1) as f64);
        let a = problem.model.a_unchecked(s);
        worst = worst.max(linalg::SymEigen::new(&a).lambda_max());
    }
    (worst >= 0.0).then_some(worst)
}

/// Empirical constant of the optimal-regularity bound: the ratio
///
/// ```text
/// sup_s ||u(s,·)||_{C_p^{2+θ}}  /  ( ||φ||_{C_p^{2+θ}} + sup_s ||f(s,·)||_{C_p^θ} )
/// ```
///
/// with all norms estimated by the same grid and pair budget.
pub fn schauder_ratio(problem: &CauchyProblem, grid: &SolveGrid) -> Result<f64, CauchyError> {
    schauder_ratio_with(problem, grid, 8.0, 48)
}

pub fn schauder_ratio_with(
    problem: &CauchyProblem,
    grid: &SolveGrid,
    radius: f64,
    pair_budget: usize,
) -> Result<f64, CauchyError> {
    let theta = problem.theta;
    assert!(theta > 0.0 && theta < 1.0, "theta must lie in (0,1)");
    let eval = MildEvaluator::new(problem.clone(), grid)?;
    let dim = problem.model.dim();
    let weight = problem.weight;

    // sup_s ||u(s,·)||_{C_p^{2+θ}} over the solve times
    let numerator = grid
        .times
        .par_iter()
        .map(|&s| -> Result<f64, CauchyError> {
            let pairs2 = multi_indices(dim, 2);
            let mut value_sup = 0.0_f64;
            let mut grad_sup = vec![0.0_f64; dim];
            let mut hess_sup = vec![0.0_f64; pairs2.len()];
            for x in &grid.points {
                let p = weight.value(x);
                value_sup = value_sup.max(eval.value(s, x)?.abs() / p);
                let g = eval.gradient(s, x)?;
                for i in 0..dim {
                    grad_sup[i] = grad_sup[i].max(g[i].abs() / p);
                }
                let h = eval.hessian(s, x)?;
                for (bi, beta) in pairs2.iter().enumerate() {
                    let (i, j) = pair_of(beta);
                    hess_sup[bi] = hess_sup[bi].max(h[(i, j)].abs() / p);
                }
            }
            let mut total =
                value_sup + grad_sup.iter().sum::<f64>() + hess_sup.iter().sum::<f64>();
            // Hölder-θ seminorms of the second-derivative quotients
            for beta in &pairs2 {
                let (i, j) = pair_of(beta);
                let field = |x: &Vector| match eval.hessian(s, x) {
                    Ok(h) => h[(i, j)] / weight.value(x),
                    Err(_) => f64::NAN,
                };
                let est = weights::holder_quotient_dim(&field, theta, radius, pair_budget, dim)?;
                total += est.value;
            }
            Ok(total)
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))?;

    // ||φ||_{C_p^{2+θ}}
    let phi_norm = problem
        .phi
        .cp_holder_norm(2.0 + theta, radius, weights::DEFAULT_GRID_POINTS, pair_budget)?
        .value;
    // sup_s ||f(s,·)||_{C_p^θ}
    let mut src_norm = 0.0_f64;
    if let Some(src) = &problem.source {
        for &s in &grid.times {
            let n = src
                .at(s)
                .cp_holder_norm(theta, radius, weights::DEFAULT_GRID_POINTS, pair_budget)?
                .value;
            src_norm = src_norm.max(n);
        }
    }
    Ok(numerator / (phi_norm + src_norm))
}

fn pair_of(beta: &[u32]) -> (usize, usize) {
    let mut idx = Vec::with_capacity(2);
    for (i, &b) in beta.iter().enumerate() {
        for _ in 0..b {
            idx.push(i);
        }
    }
    (idx[0], idx[1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientModel;
    use crate::testbank;
    use approx::assert_relative_eq;

    fn poly1() -> WeightSpec {
        WeightSpec::polynomial(1).unwrap()
    }

    fn grid_1d(times: &[f64], xs: &[f64]) -> SolveGrid {
        SolveGrid::new(
            times.to_vec(),
            xs.iter().map(|&v| Vector::from_element(1, v)).collect(),
        )
    }

    #[test]
    fn apply_l_closed_forms() {
        // ψ = |x|², A = -I, Q = I, h = 0 in 2D: L ψ = ½ Tr(2I) + <-x, 2x> = 2 - 2|x|².
        let m = CoefficientModel::constant(
            Matrix::identity(2, 2) * -1.0,
            Matrix::identity(2, 2),
            Vector::zeros(2),
            (-5.0, 5.0),
        );
        let psi = testbank::by_name("normsq", 2, &poly1()).unwrap();
        let x = Vector::from_row_slice(&[0.6, -0.2]);
        let got = apply_l(&m, 0.0, &psi, &x).unwrap();
        assert_relative_eq!(got, 2.0 - 2.0 * x.norm_squared(), epsilon = 1e-12);

        // constant ψ: L ψ = 0
        let one = testbank::by_name("one", 2, &poly1()).unwrap();
        assert_relative_eq!(apply_l(&m, 0.0, &one, &x).unwrap(), 0.0, epsilon = 1e-14);

        // linear ψ = x1: L ψ = <A x + h, e1>
        let mh = CoefficientModel::constant(
            Matrix::identity(2, 2) * -1.0,
            Matrix::identity(2, 2),
            Vector::from_row_slice(&[0.3, 0.1]),
            (-5.0, 5.0),
        );
        let psi = testbank::by_name("coord1", 2, &poly1()).unwrap();
        let got = apply_l(&mh, 0.5, &psi, &x).unwrap();
        assert_relative_eq!(got, -x[0] + 0.3, epsilon = 1e-12);
    }

    #[test]
    fn homogeneous_constant_datum_stays_one() {
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("ou1", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            testbank::by_name("one", 1, &poly1()).unwrap(),
            0.5,
        );
        let grid = grid_1d(&[0.0, 0.3, 0.6, 1.0], &[-1.0, 0.0, 0.8]);
        let ms = solve_homogeneous(&problem, &grid).unwrap();
        for row in &ms.values {
            for &v in row {
                assert_relative_eq!(v, 1.0, epsilon = 1e-9);
            }
        }
        assert!(ms.max_residual() < 1e-7, "residual {}", ms.max_residual());
    }

    #[test]
    fn heat_cosine_closed_form_solution() {
        // A=0, Q=2: u(s,x) = e^{-(T-s)} cos x.
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("heat", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            testbank::by_name("cos1", 1, &poly1()).unwrap(),
            0.5,
        );
        let grid = grid_1d(&[0.0, 0.25, 0.5, 0.75, 1.0], &[-1.2, 0.0, 0.4, 1.5]);
        let ms = solve_homogeneous(&problem, &grid).unwrap();
        for (i, &s) in ms.times.iter().enumerate() {
            for (j, x) in ms.points.iter().enumerate() {
                let exact = (-(1.0 - s)).exp() * x[0].cos();
                assert!(
                    (ms.values[i][j] - exact).abs() < 1e-6,
                    "u({s},{}) = {} vs {exact}",
                    x[0],
                    ms.values[i][j]
                );
            }
        }
    }

    #[test]
    fn terminal_condition_is_exact_on_grid() {
        let phi = testbank::by_name("gauss", 1, &poly1()).unwrap();
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("ou1", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            phi.clone(),
            0.3,
        );
        let grid = grid_1d(&[0.5, 1.0], &[-0.7, 0.2, 1.1]);
        let ms = solve_homogeneous(&problem, &grid).unwrap();
        for (j, x) in ms.points.iter().enumerate() {
            assert_eq!(ms.values[1][j].to_bits(), phi.eval(x).to_bits());
        }
    }

    #[test]
    fn continuity_up_to_the_terminal_time() {
        let phi = testbank::by_name("gauss", 1, &poly1()).unwrap();
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("ou1", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            phi.clone(),
            0.3,
        );
        let grid = grid_1d(&[0.5], &[0.3]).without_derivatives();
        let eval = MildEvaluator::new(problem, &grid).unwrap();
        let x = Vector::from_element(1, 0.3);
        let mut prev = f64::INFINITY;
        for &h in &[0.2, 0.1, 0.05, 0.025] {
            let gap = (eval.value(1.0 - h, &x).unwrap() - phi.eval(&x)).abs();
            assert!(gap < prev, "no contraction at h={h}");
            // first order in h
            assert!(gap < 2.0 * h, "gap {gap} at h={h}");
            prev = gap;
        }
    }

    #[test]
    fn unit_source_gives_remaining_time() {
        // φ=0, f=1: u(s,x) = T - s since P 1 = 1.
        let t_end = 1.5;
        let problem = CauchyProblem {
            model: CoefficientModel::builtin("ou1", None).unwrap(),
            weight: poly1(),
            a: 0.0,
            t_end,
            phi: WeightedFunction::new(poly1(), |_| 0.0).with_dim(1),
            source: Some(SourceField::new(poly1(), 1, |_, _| 1.0)),
            theta: 0.5,
        };
        let grid = grid_1d(&[0.0, 0.5, 1.0, 1.5], &[-1.0, 0.3]);
        let ms = solve(&problem, &grid).unwrap();
        for (i, &s) in ms.times.iter().enumerate() {
            for &v in &ms.values[i] {
                assert!(
                    (v - (t_end - s)).abs() <= 1e-8,
                    "u({s}) = {v} vs {}",
                    t_end - s
                );
            }
        }
    }

    #[test]
    fn linear_source_closed_form_1d() {
        // φ=0, f(r,x) = x, A=-1, h=0: u(s,x) = x (1 - e^{-(T-s)}).
        let t_end = 1.0;
        let problem = CauchyProblem {
            model: CoefficientModel::builtin("ou1", None).unwrap(),
            weight: poly1(),
            a: 0.0,
            t_end,
            phi: WeightedFunction::new(poly1(), |_| 0.0).with_dim(1),
            source: Some(SourceField::new(poly1(), 1, |_, x: &Vector| x[0])),
            theta: 0.5,
        };
        let grid = grid_1d(&[0.0, 0.4, 0.8], &[-2.0, 0.5, 1.0]);
        let ms = solve(&problem, &grid).unwrap();
        for (i, &s) in ms.times.iter().enumerate() {
            for (j, x) in ms.points.iter().enumerate() {
                let exact = x[0] * (1.0 - (-(t_end - s)).exp());
                assert!(
                    (ms.values[i][j] - exact).abs() < 1e-8,
                    "u({s},{}) = {} vs {exact}",
                    x[0],
                    ms.values[i][j]
                );
            }
        }
    }

    #[test]
    fn zero_source_coincides_with_homogeneous_bit_for_bit() {
        let phi = testbank::by_name("gauss", 1, &poly1()).unwrap();
        let problem = CauchyProblem {
            model: CoefficientModel::builtin("ou1", None).unwrap(),
            weight: poly1(),
            a: 0.0,
            t_end: 1.0,
            phi,
            source: None,
            theta: 0.5,
        };
        let grid = grid_1d(&[0.0, 0.5], &[0.0, 0.7]).without_derivatives();
        let a = solve(&problem, &grid).unwrap();
        let b = solve_homogeneous(&problem, &grid).unwrap();
        for (ra, rb) in a.values.iter().zip(&b.values) {
            for (va, vb) in ra.iter().zip(rb) {
                assert_eq!(va.to_bits(), vb.to_bits());
            }
        }
    }

    #[test]
    fn residual_scales_quadratically_in_h_s() {
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("heat", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            testbank::by_name("cos1", 1, &poly1()).unwrap(),
            0.5,
        );
        let xs = [-0.8, 0.1, 0.9];
        let r_coarse = solve_homogeneous(&problem, &grid_1d(&[0.5], &xs).with_h_s(0.08))
            .unwrap()
            .max_residual();
        let r_fine = solve_homogeneous(&problem, &grid_1d(&[0.5], &xs).with_h_s(0.04))
            .unwrap()
            .max_residual();
        let ratio = r_coarse / r_fine;
        assert!(
            (2.5..6.0).contains(&ratio),
            "contraction ratio {ratio} (coarse {r_coarse}, fine {r_fine})"
        );
        // and the absolute size sits at the consistency scale
        assert!(r_coarse <= 10.0 * (0.08_f64.powi(2) + 1e-8));
    }

    #[test]
    fn solve_is_linear_in_the_data() {
        let m = CoefficientModel::builtin("ou1", None).unwrap();
        let grid = grid_1d(&[0.2, 0.6], &[-0.5, 0.4]).without_derivatives();
        let mk = |c_phi: f64, c_src: f64| CauchyProblem {
            model: m.clone(),
            weight: poly1(),
            a: 0.0,
            t_end: 1.0,
            phi: WeightedFunction::new(poly1(), move |x: &Vector| c_phi * x[0].cos()).with_dim(1),
            source: Some(SourceField::new(poly1(), 1, move |r, x: &Vector| {
                c_src * (x[0] + r)
            })),
            theta: 0.5,
        };
        let u1 = solve(&mk(1.0, 0.0), &grid).unwrap();
        let u2 = solve(&mk(0.0, 1.0), &grid).unwrap();
        let u12 = solve(&mk(1.0, 1.0), &grid).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (u12.values[i][j] - u1.values[i][j] - u2.values[i][j]).abs() < 1e-10,
                    "superposition defect"
                );
            }
        }
    }

    #[test]
    fn exponential_weight_with_indefinite_drift_warns() {
        let w = WeightSpec::exponential(0.25).unwrap();
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("heat", None).unwrap(),
            w,
            0.0,
            0.5,
            testbank::by_name("gauss", 1, &w).unwrap(),
            0.5,
        );
        let grid = grid_1d(&[0.25], &[0.0]).without_derivatives();
        let ms = solve(&problem, &grid).unwrap();
        assert!(!ms.diagnostics.warnings.is_empty());
    }

    #[test]
    fn schauder_ratio_of_trivial_problem_is_at_most_one() {
        let problem = CauchyProblem::homogeneous(
            CoefficientModel::builtin("ou1", None).unwrap(),
            poly1(),
            0.0,
            1.0,
            testbank::by_name("one", 1, &poly1()).unwrap(),
            0.5,
        );
        let grid = grid_1d(&[0.0, 0.5, 1.0], &[-1.0, 0.0, 1.0]);
        let ratio = schauder_ratio(&problem, &grid).unwrap();
        assert!(ratio <= 1.0 + 0.05, "ratio {ratio}");
    }

    #[test]
    fn schauder_ratio_is_scale_invariant() {
        let mk = |lambda: f64| CauchyProblem {
            model: CoefficientModel::builtin("ou1", None).unwrap(),
            weight: poly1(),
            a: 0.0,
            t_end: 1.0,
            phi: WeightedFunction::new(poly1(), move |x: &Vector| lambda * x[0].cos())
                .with_gradient(move |x: &Vector| Vector::from_element(1, -lambda * x[0].sin()))
                .with_hessian(move |x: &Vector| Matrix::from_element(1, 1, -lambda * x[0].cos()))
                .with_dim(1),
            source: Some(SourceField::new(poly1(), 1, move |r, x: &Vector| {
                lambda * (x[0] * 0.2 + r).sin()
            })),
            theta: 0.4,
        };
        let grid = grid_1d(&[0.0, 0.5], &[-1.0, 0.2, 0.9]);
        let r1 = schauder_ratio(&mk(1.0), &grid).unwrap();
        let r2 = schauder_ratio(&mk(7.5), &grid).unwrap();
        assert!((r1 - r2).abs() <= 1e-10 * r1.max(r2), "r1 {r1} vs r2 {r2}");
    }
}
