//! Weight functions and empirical weighted norms.
//!
//! Two weight families are supported: polynomial weights `p(x) = 1 + |x|^{2m}`
//! and exponential weights `p(x) = exp((1 + |x|²)^γ)` with `γ ∈ (0, 1/2]`.
//!
//! Note on the exponential family: the form `exp((1+|x|²)^γ)` is the one all
//! estimators here assume. The norm estimators below accept raw closures, so a
//! differently normalized exponential weight can be plugged in without
//! touching the rest of the crate.
//!
//! Norms over the unbounded domain are *estimated* on balls `B(0, R)`; every
//! estimate records its radius so callers can run R-refinement studies. The
//! default radius schedule is `{5, 10, 20}`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{multi_indices, unit_ball_points, unit_sphere_points};
use crate::{Matrix, Vector};

/// Radius schedule used by R-refinement studies and the norm-equivalence
/// check.
pub const RADIUS_SCHEDULE: [f64; 3] = [5.0, 10.0, 20.0];

/// Smallest pair separation for Hölder quotients; below this floating-point
/// cancellation dominates in double precision.
pub const HOLDER_SEPARATION_FLOOR: f64 = 1e-4;
/// Largest pair separation for Hölder quotients.
pub const HOLDER_SEPARATION_CAP: f64 = 1.0;

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("invalid weight: {0}")]
    InvalidWeight(String),
    #[error("derivatives up to order {requested} required, supported maximum is {max}")]
    MissingDerivatives { requested: u32, max: u32 },
    #[error("evaluation produced a non-finite value at x = {at:?}")]
    EvaluationFailure { at: Vec<f64> },
}

/// A weight family instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum WeightSpec {
    Polynomial { m: u32 },
    Exponential { gamma: f64 },
}

impl WeightSpec {
    pub fn polynomial(m: u32) -> Result<Self, WeightsError> {
        if m < 1 {
            return Err(WeightsError::InvalidWeight(
                "polynomial exponent m must be >= 1".into(),
            ));
        }
        Ok(WeightSpec::Polynomial { m })
    }

    pub fn exponential(gamma: f64) -> Result<Self, WeightsError> {
        if !(gamma > 0.0 && gamma <= 0.5) {
            return Err(WeightsError::InvalidWeight(format!(
                "exponential exponent gamma must lie in (0, 1/2], got {gamma}"
            )));
        }
        Ok(WeightSpec::Exponential { gamma })
    }

    /// Parses `poly:m` or `exp:gamma`.
    pub fn parse(s: &str) -> Result<Self, WeightsError> {
        let (fam, arg) = s
            .split_once(':')
            .ok_or_else(|| WeightsError::InvalidWeight(format!("expected `poly:m` or `exp:gamma`, got `{s}`")))?;
        match fam {
            "poly" => {
                let m: u32 = arg
                    .parse()
                    .map_err(|_| WeightsError::InvalidWeight(format!("bad polynomial exponent `{arg}`")))?;
                Self::polynomial(m)
            }
            "exp" => {
                let gamma: f64 = arg
                    .parse()
                    .map_err(|_| WeightsError::InvalidWeight(format!("bad exponential exponent `{arg}`")))?;
                Self::exponential(gamma)
            }
            other => Err(WeightsError::InvalidWeight(format!(
                "unknown weight family `{other}`"
            ))),
        }
    }

    /// `p(x)`; always >= 1.
    pub fn value(&self, x: &Vector) -> f64 {
        match *self {
            WeightSpec::Polynomial { m } => 1.0 + x.norm_squared().powi(m as i32),
            WeightSpec::Exponential { gamma } => (1.0 + x.norm_squared()).powf(gamma).exp(),
        }
    }

    /// `log p(x)`, safe for large arguments of the exponential family.
    pub fn log_value(&self, x: &Vector) -> f64 {
        match *self {
            WeightSpec::Polynomial { .. } => self.value(x).ln(),
            WeightSpec::Exponential { gamma } => (1.0 + x.norm_squared()).powf(gamma),
        }
    }

    /// Exact gradient of the weight.
    pub fn gradient(&self, x: &Vector) -> Vector {
        match *self {
            WeightSpec::Polynomial { m } => {
                let r2 = x.norm_squared();
                if m == 1 {
                    x * 2.0
                } else {
                    x * (2.0 * m as f64 * r2.powi(m as i32 - 1))
                }
            }
            WeightSpec::Exponential { gamma } => {
                let r2 = x.norm_squared();
                let p = (1.0 + r2).powf(gamma).exp();
                x * (p * 2.0 * gamma * (1.0 + r2).powf(gamma - 1.0))
            }
        }
    }
}

impl std::fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match *self {
            WeightSpec::Polynomial { m } => write!(f, "poly:{m}"),
            WeightSpec::Exponential { gamma } => write!(f, "exp:{gamma}"),
        }
    }
}

/// Value of the weight at `x` (free-function form of [`WeightSpec::value`]).
pub fn weight_value(weight: &WeightSpec, x: &Vector) -> f64 {
    weight.value(x)
}

pub type ScalarField = Arc<dyn Fn(&Vector) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
/// Third derivatives as a rank-3 array: entry `k` holds the matrix of
/// `∂³f/∂x_i ∂x_j ∂x_k`.
pub type ThirdField = Arc<dyn Fn(&Vector) -> Vec<Matrix> + Send + Sync>;

// Central-difference base steps by derivative order; scaled by (1 + |x_i|).
const FD_STEP_1: f64 = 1e-5;
const FD_STEP_2: f64 = 4e-4;
const FD_STEP_3: f64 = 4e-3;

/// A scalar field on R^N paired with a weight, with exact derivative fields
/// when available and central-difference fallbacks otherwise.
#[derive(Clone)]
pub struct WeightedFunction {
    name: Option<String>,
    weight: WeightSpec,
    dim: Option<usize>,
    f: ScalarField,
    grad: Option<VectorField>,
    hess: Option<MatrixField>,
    third: Option<ThirdField>,
}

impl WeightedFunction {
    pub fn new(weight: WeightSpec, f: impl Fn(&Vector) -> f64 + Send + Sync + 'static) -> Self {
        WeightedFunction {
            name: None,
            weight,
            dim: None,
            f: Arc::new(f),
            grad: None,
            hess: None,
            third: None,
        }
    }

    pub fn from_field(weight: WeightSpec, f: ScalarField) -> Self {
        WeightedFunction {
            name: None,
            weight,
            dim: None,
            f,
            grad: None,
            hess: None,
            third: None,
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = Some(name.into());
        self
    }

    pub fn with_gradient(mut self, g: impl Fn(&Vector) -> Vector + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(mut self, h: impl Fn(&Vector) -> Matrix + Send + Sync + 'static) -> Self {
        self.hess = Some(Arc::new(h));
        self
    }

    pub fn with_third(mut self, t: impl Fn(&Vector) -> Vec<Matrix> + Send + Sync + 'static) -> Self {
        self.third = Some(Arc::new(t));
        self
    }

    pub fn name(&self) -> Option<&str> {
        self.name.as_deref()
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn has_exact_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_exact_hessian(&self) -> bool {
        self.hess.is_some()
    }

    pub fn eval(&self, x: &Vector) -> f64 {
        (self.f)(x)
    }

    /// `f(x)/p(x)`.
    pub fn ratio(&self, x: &Vector) -> f64 {
        self.eval(x) / self.weight.value(x)
    }

    /// Gradient; exact field if supplied, otherwise central differences.
    pub fn grad(&self, x: &Vector) -> Vector {
        if let Some(g) = &self.grad {
            return g(x);
        }
        let n = x.len();
        Vector::from_iterator(
            n,
            (0..n).map(|i| {
                let h = FD_STEP_1 * (1.0 + x[i].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                (self.eval(&xp) - self.eval(&xm)) / (2.0 * h)
            }),
        )
    }

    /// Hessian; exact field, or central differences of the exact gradient, or
    /// second differences of the values.
    pub fn hess(&self, x: &Vector) -> Matrix {
        if let Some(h) = &self.hess {
            return h(x);
        }
        let n = x.len();
        if self.grad.is_some() {
            let mut out = Matrix::zeros(n, n);
            for j in 0..n {
                let h = FD_STEP_2 * (1.0 + x[j].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let col = (self.grad(&xp) - self.grad(&xm)) / (2.0 * h);
                out.set_column(j, &col);
            }
            return crate::linalg::symmetrize(&out);
        }
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            let hi = FD_STEP_2 * (1.0 + x[i].abs());
            for j in i..n {
                let hj = FD_STEP_2 * (1.0 + x[j].abs());
                let v = if i == j {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[i] += hi;
                    xm[i] -= hi;
                    (self.eval(&xp) - 2.0 * self.eval(x) + self.eval(&xm)) / (hi * hi)
                } else {
                    let mut xpp = x.clone();
                    let mut xpm = x.clone();
                    let mut xmp = x.clone();
                    let mut xmm = x.clone();
                    xpp[i] += hi;
                    xpp[j] += hj;
                    xpm[i] += hi;
                    xpm[j] -= hj;
                    xmp[i] -= hi;
                    xmp[j] += hj;
                    xmm[i] -= hi;
                    xmm[j] -= hj;
                    (self.eval(&xpp) - self.eval(&xpm) - self.eval(&xmp) + self.eval(&xmm))
                        / (4.0 * hi * hj)
                };
                out[(i, j)] = v;
                out[(j, i)] = v;
            }
        }
        out
    }

    /// Third derivatives; exact field or central differences of the Hessian.
    pub fn third(&self, x: &Vector) -> Vec<Matrix> {
        if let Some(t) = &self.third {
            return t(x);
        }
        let n = x.len();
        (0..n)
            .map(|k| {
                let h = FD_STEP_3 * (1.0 + x[k].abs());
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += h;
                xm[k] -= h;
                (self.hess(&xp) - self.hess(&xm)) / (2.0 * h)
            })
            .collect()
    }

    /// Derivative for an explicit multi-index with `|beta| <= 3`.
    pub fn partial(&self, x: &Vector, beta: &[u32]) -> Result<f64, WeightsError> {
        let order: u32 = beta.iter().sum();
        match order {
            0 => Ok(self.eval(x)),
            1 => {
                let i = beta.iter().position(|&b| b > 0).unwrap();
                Ok(self.grad(x)[i])
            }
            2 => {
                let (i, j) = index_pair(beta);
                Ok(self.hess(x)[(i, j)])
            }
            3 => {
                let (i, j, k) = index_triple(beta);
                Ok(self.third(x)[k][(i, j)])
            }
            requested => Err(WeightsError::MissingDerivatives { requested, max: 3 }),
        }
    }

    /// Largest mismatch between the supplied derivative fields and central
    /// differences of the values, over the given points. Used to validate
    /// exact derivatives.
    pub fn derivative_consistency(&self, points: &[Vector]) -> f64 {
        let mut worst: f64 = 0.0;
        for x in points {
            if let Some(g) = &self.grad {
                let exact = g(x);
                let fallback = WeightedFunction {
                    grad: None,
                    ..self.clone()
                }
                .grad(x);
                worst = worst.max((exact - fallback).amax());
            }
            if let Some(h) = &self.hess {
                let exact = h(x);
                let fallback = WeightedFunction {
                    hess: None,
                    ..self.clone()
                }
                .hess(x);
                worst = worst.max((exact - fallback).amax());
            }
        }
        worst
    }

    pub fn weighted_sup_norm(&self, radius: f64, n: usize) -> Result<NormEstimate, WeightsError> {
        let field = |x: &Vector| self.eval(x);
        sup_ratio_dim(&field, &self.weight, radius, n, self.probe_dim())
    }

    pub fn holder_seminorm(
        &self,
        alpha: f64,
        radius: f64,
        pair_budget: usize,
    ) -> Result<NormEstimate, WeightsError> {
        assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0,1)");
        let g = |x: &Vector| self.ratio(x);
        holder_quotient_dim(&g, alpha, radius, pair_budget, self.probe_dim())
    }

    /// `Σ_{|β|<=θ} ||D^β f||_{C_p}` estimated on a ball grid (the route that
    /// differentiates `f` and divides by `p`).
    pub fn cp_norm(&self, theta: u32, radius: f64, n: usize) -> Result<NormEstimate, WeightsError> {
        if theta > 3 {
            return Err(WeightsError::MissingDerivatives {
                requested: theta,
                max: 3,
            });
        }
        let dim = self.probe_dim();
        let grid = ball_grid(dim, radius, n);
        let mut total = 0.0;
        for order in 0..=theta {
            for beta in multi_indices(dim, order) {
                let mut sup: f64 = 0.0;
                for x in &grid {
                    let v = self.partial(x, &beta)? / self.weight.value(x);
                    if !v.is_finite() {
                        return Err(WeightsError::EvaluationFailure {
                            at: x.iter().cloned().collect(),
                        });
                    }
                    sup = sup.max(v.abs());
                }
                total += sup;
            }
        }
        Ok(NormEstimate {
            value: total,
            radius,
            points: grid.len(),
            kind: NormKind::CpTheta { theta: theta as f64 },
        })
    }

    /// `||f/p||_{C_b^θ}` estimated on the same kind of grid (the route that
    /// differentiates the quotient).
    pub fn ratio_cb_norm(&self, theta: u32, radius: f64, n: usize) -> Result<NormEstimate, WeightsError> {
        if theta > 3 {
            return Err(WeightsError::MissingDerivatives {
                requested: theta,
                max: 3,
            });
        }
        let dim = self.probe_dim();
        let grid = ball_grid(dim, radius, n);
        let g = |x: &Vector| self.ratio(x);
        let mut total = 0.0;
        for order in 0..=theta {
            for beta in multi_indices(dim, order) {
                let mut sup: f64 = 0.0;
                for x in &grid {
                    let v = fd_partial(&g, x, &beta);
                    if !v.is_finite() {
                        return Err(WeightsError::EvaluationFailure {
                            at: x.iter().cloned().collect(),
                        });
                    }
                    sup = sup.max(v.abs());
                }
                total += sup;
            }
        }
        Ok(NormEstimate {
            value: total,
            radius,
            points: grid.len(),
            kind: NormKind::CpTheta { theta: theta as f64 },
        })
    }

    /// Ratio bounds between the two equivalent `C_p^θ` norms across the
    /// radius schedule: `Σ ||D^β f||_{C_p}` against `||f/p||_{C_b^θ}`.
    /// Returns `(ratio_lo, ratio_hi)`; the `0/0` case is reported as 1.
    pub fn norm_equivalence_check(&self, theta: u32) -> Result<(f64, f64), WeightsError> {
        if theta > 3 {
            return Err(WeightsError::MissingDerivatives {
                requested: theta,
                max: 3,
            });
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &radius in RADIUS_SCHEDULE.iter() {
            let a = self.cp_norm(theta, radius, DEFAULT_GRID_POINTS)?.value;
            let b = self.ratio_cb_norm(theta, radius, DEFAULT_GRID_POINTS)?.value;
            let ratio = if a == 0.0 && b == 0.0 { 1.0 } else { a / b };
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        Ok((lo, hi))
    }

    /// `C_p^θ` norm for fractional `θ = k + α`: integer part by `cp_norm`,
    /// plus the Hölder-α seminorms of the order-`k` derivative quotients.
    pub fn cp_holder_norm(
        &self,
        theta: f64,
        radius: f64,
        n: usize,
        pair_budget: usize,
    ) -> Result<NormEstimate, WeightsError> {
        let k = theta.floor() as u32;
        let alpha = theta - k as f64;
        let mut value = self.cp_norm(k, radius, n)?.value;
        if alpha > 1e-12 {
            let dim = self.probe_dim();
            for beta in multi_indices(dim, k) {
                let g = |x: &Vector| match self.partial(x, &beta) {
                    Ok(v) => v / self.weight.value(x),
                    Err(_) => f64::NAN,
                };
                value += holder_quotient_dim(&g, alpha, radius, pair_budget, dim)?.value;
            }
        }
        Ok(NormEstimate {
            value,
            radius,
            points: n,
            kind: NormKind::CpTheta { theta },
        })
    }

    /// Dimension the function is evaluated in; bank closures accept any N,
    /// so the dimension is carried as a tag set by [`Self::with_dim`].
    pub fn with_dim(mut self, dim: usize) -> Self {
        self.dim = Some(dim);
        self
    }

    fn probe_dim(&self) -> usize {
        self.dim.unwrap_or(1)
    }
}

/// Kind of norm an estimate refers to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum NormKind {
    Sup,
    Holder { alpha: f64 },
    CpTheta { theta: f64 },
}

/// A norm estimate together with the grid it was computed on.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormEstimate {
    pub value: f64,
    pub radius: f64,
    pub points: usize,
    pub kind: NormKind,
}

pub(crate) const DEFAULT_GRID_POINTS: usize = 192;

/// Low-discrepancy evaluation grid on `B(0, R)` augmented with the origin and
/// axis points at radii `R` and `R/2`. The low-discrepancy prefix property
/// makes the point set monotone under refinement of `n`.
pub fn ball_grid(dim: usize, radius: f64, n: usize) -> Vec<Vector> {
    let mut pts = vec![Vector::zeros(dim)];
    for i in 0..dim {
        for &r in &[radius, 0.5 * radius] {
            let mut e = Vector::zeros(dim);
            e[i] = r;
            pts.push(e.clone());
            e[i] = -r;
            pts.push(e);
        }
    }
    pts.extend(unit_ball_points(dim, n).into_iter().map(|x| x * radius));
    pts
}

/// Sup of `|field|/p` over the standard grid in the given dimension.
pub fn sup_ratio_dim(
    field: &dyn Fn(&Vector) -> f64,
    weight: &WeightSpec,
    radius: f64,
    n: usize,
    dim: usize,
) -> Result<NormEstimate, WeightsError> {
    let grid = ball_grid(dim, radius, n);
    let mut sup: f64 = 0.0;
    for x in &grid {
        let v = field(x) / weight.value(x);
        if !v.is_finite() {
            return Err(WeightsError::EvaluationFailure {
                at: x.iter().cloned().collect(),
            });
        }
        sup = sup.max(v.abs());
    }
    Ok(NormEstimate {
        value: sup,
        radius,
        points: grid.len(),
        kind: NormKind::Sup,
    })
}

/// Hölder-α quotient estimate of a (already weighted) field `g`: max of
/// `|g(x) - g(y)|/|x-y|^α` over pairs at logarithmically spaced separations
/// around low-discrepancy centers.
pub fn holder_quotient_dim(
    g: &dyn Fn(&Vector) -> f64,
    alpha: f64,
    radius: f64,
    pair_budget: usize,
    dim: usize,
) -> Result<NormEstimate, WeightsError> {
    assert!(alpha > 0.0 && alpha < 1.0);
    let n_sep = 13usize;
    let dirs = axis_and_halton_directions(dim);
    let n_centers = (pair_budget / (n_sep * dirs.len())).max(1);
    let mut centers = vec![Vector::zeros(dim)];
    centers.extend(
        unit_ball_points(dim, n_centers.saturating_sub(1))
            .into_iter()
            .map(|x| x * radius),
    );
    let lo = HOLDER_SEPARATION_FLOOR.ln();
    let hi = HOLDER_SEPARATION_CAP.ln();
    let mut sup: f64 = 0.0;
    let mut pairs = 0usize;
    for c in &centers {
        let gc = g(c);
        for dir in &dirs {
            for k in 0..n_sep {
                let t = lo + (hi - lo) * (k as f64) / ((n_sep - 1) as f64);
                let h = t.exp();
                let y = c + dir * h;
                let q = (g(&y) - gc).abs() / h.powf(alpha);
                if !q.is_finite() {
                    return Err(WeightsError::EvaluationFailure {
                        at: y.iter().cloned().collect(),
                    });
                }
                sup = sup.max(q);
                pairs += 1;
            }
        }
    }
    Ok(NormEstimate {
        value: sup,
        radius,
        points: pairs,
        kind: NormKind::Holder { alpha },
    })
}

fn axis_and_halton_directions(dim: usize) -> Vec<Vector> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        let mut e = Vector::zeros(dim);
        e[i] = 1.0;
        dirs.push(e);
    }
    if dim > 1 {
        dirs.extend(unit_sphere_points(dim, 2));
    }
    dirs
}

// Multi-index of order 2 as an (i, j) matrix position.
fn index_pair(beta: &[u32]) -> (usize, usize) {
    let mut idx = Vec::with_capacity(2);
    for (i, &b) in beta.iter().enumerate() {
        for _ in 0..b {
            idx.push(i);
        }
    }
    (idx[0], idx[1])
}

// Multi-index of order 3 as an (i, j, k) tensor position.
fn index_triple(beta: &[u32]) -> (usize, usize, usize) {
    let mut idx = Vec::with_capacity(3);
    for (i, &b) in beta.iter().enumerate() {
        for _ in 0..b {
            idx.push(i);
        }
    }
    (idx[0], idx[1], idx[2])
}

/// Central-difference multi-index derivative of a raw closure.
pub fn fd_partial(g: &dyn Fn(&Vector) -> f64, x: &Vector, beta: &[u32]) -> f64 {
    let order: u32 = beta.iter().sum();
    if order == 0 {
        return g(x);
    }
    // Peel one derivative off the first active coordinate and recurse.
    let i = beta.iter().position(|&b| b > 0).unwrap();
    let step = match order {
        1 => FD_STEP_1 * 8.0,
        2 => FD_STEP_2,
        _ => FD_STEP_3,
    } * (1.0 + x[i].abs());
    let mut lower = beta.to_vec();
    lower[i] -= 1;
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[i] += step;
    xm[i] -= step;
    (fd_partial(g, &xp, &lower) - fd_partial(g, &xm, &lower)) / (2.0 * step)
}
