//! Evaluation of the evolution operator `P_{s,t}` and its spatial derivatives
//! through third order.
//!
//! Values are Gaussian expectations against `N(U(t,s)x + g(t,s), Q(t,s))`.
//! First derivatives differentiate the Gaussian kernel:
//!
//! ```text
//! D_i P_{s,t} f(x) = ∫ f(y) <U^i(t,s), Q(t,s)^{-1}(y - a)>  N_{a,Q(t,s)}(dy)
//! ```
//!
//! with `U^i` the i-th column of the propagator. Higher derivatives factor
//! the interval at `s₁ = (s+t)/2` (`P_{s,t} = P_{s,s₁} P_{s₁,t}`) and take
//! one kernel derivative per factor, closing the recursion with
//! `D_j P_{s,s₁} g₁ = <U(s₁,s)^j, P_{s,s₁} ∇g₁>`. Third derivatives nest a
//! second split at `s + (t-s)/4`, which equidistributes the short-time
//! singularity across the factors. When `f` carries exact derivatives the
//! `*_transfer` and `*_mixed` forms move derivatives onto `f` instead, which
//! removes kernel singularities order by order.
//!
//! Derivative kernels refuse gaps below a configurable floor: the norm of
//! `Q(t,s)^{-1/2}` grows like `(t-s)^{-1/2}` and quadrature accuracy degrades
//! with it.

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::coeffs::CoefficientModel;
use crate::flow::{self, FlowError, FlowState};
use crate::gaussmeasure::{GaussError, GaussianMeasure, QuadScheme};
use crate::weights::{WeightSpec, WeightedFunction, WeightsError};
use crate::{Matrix, Vector};

/// Default gap floor for derivative kernels.
pub const DEFAULT_DELTA_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Gauss(#[from] GaussError),
    #[error(transparent)]
    Weights(#[from] WeightsError),
    #[error("time ordering: need s <= t, got s = {s}, t = {t}")]
    TimeOrder { s: f64, t: f64 },
    #[error("derivative kernel refused: t - s = {delta:.3e} is below the singularity floor {floor:.1e} where Q(t,s)^{{-1/2}} degrades")]
    SingularCovariance { delta: f64, floor: f64 },
    #[error("derivative transfer requires exact derivatives of f")]
    MissingDerivatives,
}

/// Flow data prepared once per `(s, t)` pair: the flow state plus the
/// zero-mean measure template whose spectral factorization is reused by
/// every evaluation point.
#[derive(Debug, Clone)]
pub struct PreparedFlow {
    pub state: FlowState,
    measure0: GaussianMeasure,
}

impl PreparedFlow {
    fn measure_at(&self, x: &Vector) -> GaussianMeasure {
        self.measure0.with_mean(self.state.mean(x))
    }
}

type FlowKey = (u64, u64);

/// The evolution operator bound to a model, a weight and a quadrature scheme.
///
/// Evaluations at distinct points are independent; the flow cache is a shared
/// read-mostly map with insert-if-absent semantics, and every cached value is
/// a pure function of its key, so results do not depend on insertion order.
/// Inner quadrature sums run serially in fixed node order, which makes
/// repeated evaluations at the same arguments bit-identical.
pub struct EvolutionOperator {
    model: CoefficientModel,
    weight: WeightSpec,
    scheme: QuadScheme,
    flow_tol: f64,
    delta_floor: f64,
    /// Quadrature order for the outer and middle levels of split derivatives;
    /// the innermost level (the only one that sees the raw integrand) keeps
    /// the full scheme order. `None` uses the scheme order everywhere.
    outer_order: Option<usize>,
    cache: RwLock<HashMap<FlowKey, Arc<PreparedFlow>>>,
}

impl EvolutionOperator {
    pub fn new(model: CoefficientModel, weight: WeightSpec, scheme: QuadScheme) -> Self {
        EvolutionOperator {
            model,
            weight,
            scheme,
            flow_tol: flow::DEFAULT_TOL,
            delta_floor: DEFAULT_DELTA_FLOOR,
            outer_order: None,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_flow_tol(mut self, tol: f64) -> Self {
        self.flow_tol = tol;
        self
    }

    /// Reconfigures the derivative-kernel floor (short-time rate studies).
    pub fn with_delta_floor(mut self, floor: f64) -> Self {
        self.delta_floor = floor;
        self
    }

    pub fn with_outer_order(mut self, order: usize) -> Self {
        self.outer_order = Some(order);
        self
    }

    pub fn model(&self) -> &CoefficientModel {
        &self.model
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn scheme(&self) -> &QuadScheme {
        &self.scheme
    }

    pub fn flow_tol(&self) -> f64 {
        self.flow_tol
    }

    pub fn delta_floor(&self) -> f64 {
        self.delta_floor
    }

    /// Cached flow lookup keyed by the exact bit patterns of `(s, t)`.
    pub fn prepared_flow(&self, s: f64, t: f64) -> Result<Arc<PreparedFlow>, EvolutionError> {
        let key = (s.to_bits(), t.to_bits());
        if let Some(hit) = self.cache.read().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let state = flow::flow(&self.model, s, t, self.flow_tol)?;
        let dim = self.model.dim();
        let measure0 = GaussianMeasure::new(Vector::zeros(dim), state.qc.clone())?;
        let prepared = Arc::new(PreparedFlow { state, measure0 });
        let mut w = self.cache.write().unwrap();
        Ok(w.entry(key).or_insert(prepared).clone())
    }

    fn precision_of<'a>(&self, pf: &'a PreparedFlow) -> Result<&'a Matrix, EvolutionError> {
        pf.measure0
            .precision()
            .map_err(|_| EvolutionError::SingularCovariance {
                delta: pf.state.delta(),
                floor: self.delta_floor,
            })
    }

    fn scheme_with_order(&self, order: Option<usize>) -> QuadScheme {
        match (order, self.scheme) {
            (Some(k), QuadScheme::GaussHermite { .. }) => QuadScheme::GaussHermite { order: k },
            _ => self.scheme,
        }
    }

    fn outer_scheme(&self) -> QuadScheme {
        self.scheme_with_order(self.outer_order)
    }

    fn require_order(&self, s: f64, t: f64) -> Result<(), EvolutionError> {
        if t < s {
            return Err(EvolutionError::TimeOrder { s, t });
        }
        Ok(())
    }

    fn require_floor(&self, s: f64, t: f64) -> Result<(), EvolutionError> {
        self.require_order(s, t)?;
        if t - s < self.delta_floor {
            return Err(EvolutionError::SingularCovariance {
                delta: t - s,
                floor: self.delta_floor,
            });
        }
        Ok(())
    }

    /// `P_{s,t} f(x)`; `s = t` returns `f(x)` (the identity convention).
    pub fn apply(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<f64, EvolutionError> {
        self.require_order(s, t)?;
        if s == t {
            return Ok(f.eval(x));
        }
        let pf = self.prepared_flow(s, t)?;
        let mu = pf.measure_at(x);
        Ok(mu.expectation(|y| f.eval(y), &self.scheme)?)
    }

    /// Applies the operator to a raw field (no weight attached).
    pub fn apply_field(
        &self,
        field: &dyn Fn(&Vector) -> f64,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<f64, EvolutionError> {
        self.require_order(s, t)?;
        if s == t {
            return Ok(field(x));
        }
        let pf = self.prepared_flow(s, t)?;
        let mu = pf.measure_at(x);
        Ok(mu.expectation(field, &self.scheme)?)
    }

    /// Gradient of `P_{s,t} f` through the smoothing kernel; needs no
    /// differentiability of `f`.
    pub fn gradient(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Vector, EvolutionError> {
        self.require_floor(s, t)?;
        let pf = self.prepared_flow(s, t)?;
        self.gradient_with_flow(&|y| f.eval(y), &pf, x, &self.scheme)
    }

    fn gradient_with_flow(
        &self,
        field: &dyn Fn(&Vector) -> f64,
        pf: &PreparedFlow,
        x: &Vector,
        scheme: &QuadScheme,
    ) -> Result<Vector, EvolutionError> {
        let n = x.len();
        let prec = self.precision_of(pf)?;
        let a = pf.state.mean(x);
        let ut = pf.state.u.transpose();
        let mu = pf.measure_at(x);
        Ok(mu.expectation_vec(
            |y| {
                let k = &ut * (prec * (y - &a));
                k * field(y)
            },
            n,
            scheme,
        )?)
    }

    /// Gradient with the derivative transferred onto `f`:
    /// `D P f = U(t,s)ᵀ E[∇f]`. Requires exact derivatives of `f`.
    pub fn gradient_transfer(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Vector, EvolutionError> {
        self.require_order(s, t)?;
        if !f.has_exact_gradient() {
            return Err(EvolutionError::MissingDerivatives);
        }
        if s == t {
            return Ok(f.grad(x));
        }
        let pf = self.prepared_flow(s, t)?;
        let mu = pf.measure_at(x);
        let n = x.len();
        let e_grad = mu.expectation_vec(|y| f.grad(y), n, &self.scheme)?;
        Ok(pf.state.u.transpose() * e_grad)
    }

    /// Hessian by the midpoint splitting: one kernel derivative on `[s, s₁]`
    /// applied to the gradient field of `P_{s₁,t} f`.
    pub fn hessian(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Matrix, EvolutionError> {
        self.require_floor(s, t)?;
        let s1 = 0.5 * (s + t);
        let outer = self.prepared_flow(s, s1)?;
        let inner = self.prepared_flow(s1, t)?;
        self.hessian_split(&|y| f.eval(y), &outer, &inner, x)
    }

    /// `H = E[K vᵀ] U_outer` with `K = U_oᵀ Q_o^{-1}(y - a_o)` and
    /// `v(y) = ∇(P_inner field)(y)` through the inner kernel. The inner field
    /// is evaluated exactly once per outer node.
    fn hessian_split(
        &self,
        field: &dyn Fn(&Vector) -> f64,
        outer: &PreparedFlow,
        inner: &PreparedFlow,
        x: &Vector,
    ) -> Result<Matrix, EvolutionError> {
        let n = x.len();
        let prec_o = self.precision_of(outer)?;
        let a_o = outer.state.mean(x);
        let ut_o = outer.state.u.transpose();
        let mu = outer.measure_at(x);
        let latch: RefCell<Option<EvolutionError>> = RefCell::new(None);
        let mut acc = Matrix::zeros(n, n);
        mu.for_each_node(&self.outer_scheme(), |y, w| {
            if latch.borrow().is_some() {
                return;
            }
            let k = &ut_o * (prec_o * (y - &a_o));
            match self.gradient_with_flow(field, inner, y, &self.scheme) {
                Ok(v) => acc += k * v.transpose() * w,
                Err(e) => *latch.borrow_mut() = Some(e),
            }
        })?;
        if let Some(e) = latch.into_inner() {
            return Err(e);
        }
        Ok(acc * &outer.state.u)
    }

    /// Mixed second derivative for once-differentiable `f`: one kernel
    /// derivative plus one transfer, `H = E[K (∇f)ᵀ] U(t,s)`, without
    /// splitting the interval.
    pub fn hessian_mixed(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Matrix, EvolutionError> {
        self.require_floor(s, t)?;
        if !f.has_exact_gradient() {
            return Err(EvolutionError::MissingDerivatives);
        }
        let n = x.len();
        let pf = self.prepared_flow(s, t)?;
        let prec = self.precision_of(&pf)?;
        let a = pf.state.mean(x);
        let ut = pf.state.u.transpose();
        let mu = pf.measure_at(x);
        let acc = mu.expectation_mat(
            |y| {
                let k = &ut * (prec * (y - &a));
                k * f.grad(y).transpose()
            },
            n,
            n,
            &self.scheme,
        )?;
        Ok(acc * &pf.state.u)
    }

    /// Transfer form of the Hessian for twice-differentiable `f`:
    /// `D² P f = U(t,s)ᵀ E[D²f] U(t,s)`.
    pub fn hessian_transfer(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Matrix, EvolutionError> {
        self.require_order(s, t)?;
        if !f.has_exact_hessian() {
            return Err(EvolutionError::MissingDerivatives);
        }
        if s == t {
            return Ok(f.hess(x));
        }
        let n = x.len();
        let pf = self.prepared_flow(s, t)?;
        let mu = pf.measure_at(x);
        let e_hess = mu.expectation_mat(|y| f.hess(y), n, n, &self.scheme)?;
        Ok(pf.state.u.transpose() * e_hess * &pf.state.u)
    }

    /// Third derivatives by two nested splits at `s + (t-s)/2` and
    /// `s + (t-s)/4`. Entry `k` of the result holds `D_{x_i x_j x_k} P f` at
    /// position `(i, j)`.
    pub fn third_derivs(
        &self,
        f: &WeightedFunction,
        s: f64,
        t: f64,
        x: &Vector,
    ) -> Result<Vec<Matrix>, EvolutionError> {
        self.require_floor(s, t)?;
        let n = x.len();
        let s1 = s + 0.5 * (t - s);
        let s2 = s + 0.25 * (t - s);
        let innermost = self.prepared_flow(s1, t)?;
        let middle = self.prepared_flow(s2, s1)?;
        let outer = self.prepared_flow(s, s2)?;
        // U(s1, s) = U(s1, s2) U(s2, s) by the cocycle property.
        let u_s1_s = &middle.state.u * &outer.state.u;

        let prec_o = self.precision_of(&outer)?;
        let a_o = outer.state.mean(x);
        let ut_o = outer.state.u.transpose();
        let prec_m = self.precision_of(&middle)?;
        let ut_m = middle.state.u.transpose();

        let mu_o = outer.measure_at(x);
        let latch: RefCell<Option<EvolutionError>> = RefCell::new(None);
        // acc[l] = E_y[ K_o(y) w_l(y)ᵀ ] with w_l = ∇(P_{s2,s1} φ_l) and
        // φ_l = D_l (P_{s1,t} f) through the innermost kernel.
        let mut acc: Vec<Matrix> = vec![Matrix::zeros(n, n); n];
        mu_o.for_each_node(&self.outer_scheme(), |y, w_node| {
            if latch.borrow().is_some() {
                return;
            }
            let k_o = &ut_o * (prec_o * (y - &a_o));
            let a_m = middle.state.mean(y);
            let mu_m = middle.measure_at(y);
            // W(y)[d][l] = E_z[ K_m(z)_d φ_l(z) ]
            let w_mat = mu_m.expectation_mat(
                |z| {
                    let k_m = &ut_m * (prec_m * (z - &a_m));
                    let phi = match self.gradient_with_flow(
                        &|zz| f.eval(zz),
                        &innermost,
                        z,
                        &self.scheme,
                    ) {
                        Ok(v) => v,
                        Err(e) => {
                            *latch.borrow_mut() = Some(e);
                            Vector::zeros(n)
                        }
                    };
                    k_m * phi.transpose()
                },
                n,
                n,
                &self.outer_scheme(),
            );
            match w_mat {
                Ok(w_mat) => {
                    for l in 0..n {
                        let w_l = w_mat.column(l);
                        acc[l] += (&k_o * w_l.transpose()) * w_node;
                    }
                }
                Err(e) => *latch.borrow_mut() = Some(e.into()),
            }
        })?;
        if let Some(e) = latch.into_inner() {
            return Err(e);
        }
        // D_i D_j P_{s,s1} φ_l = (E[K_o w_lᵀ] U(s2,s))_{ij}; contract the
        // remaining derivative with the columns of U(s1, s).
        let per_l: Vec<Matrix> = acc
            .into_iter()
            .map(|m| m * &outer.state.u)
            .collect();
        let mut out = vec![Matrix::zeros(n, n); n];
        for k in 0..n {
            for l in 0..n {
                out[k] += &per_l[l] * u_s1_s[(l, k)];
            }
        }
        Ok(out)
    }

    /// Weighted sup over the grid of the Chapman-Kolmogorov defect
    /// `|P_{s,t} f - P_{s,r}(P_{r,t} f)| / p`; the inner operator is
    /// evaluated pointwise on quadrature demand.
    pub fn compose_check(
        &self,
        f: &WeightedFunction,
        s: f64,
        r: f64,
        t: f64,
        grid: &[Vector],
    ) -> Result<f64, EvolutionError> {
        assert!(s < r && r < t, "need s < r < t");
        let latch: RefCell<Option<EvolutionError>> = RefCell::new(None);
        let inner = |y: &Vector| match self.apply(f, r, t, y) {
            Ok(v) => v,
            Err(e) => {
                *latch.borrow_mut() = Some(e);
                f64::NAN
            }
        };
        let mut worst: f64 = 0.0;
        for x in grid {
            let direct = self.apply(f, s, t, x)?;
            let composed = self.apply_field(&inner, s, r, x)?;
            if let Some(e) = latch.borrow_mut().take() {
                return Err(e);
            }
            let defect = (direct - composed).abs() / self.weight.value(x);
            worst = worst.max(defect);
        }
        Ok(worst)
    }

    /// The truncation `S_n f = P_{s,r}(χ_{B(0,n)} P_{r,t} f)` at `x`,
    /// with the indicator applied as a sharp node mask.
    pub fn truncated(
        &self,
        f: &WeightedFunction,
        s: f64,
        r: f64,
        t: f64,
        n_radius: f64,
        x: &Vector,
    ) -> Result<f64, EvolutionError> {
        assert!(s < r && r < t, "need s < r < t");
        assert!(n_radius > 0.0);
        let latch: RefCell<Option<EvolutionError>> = RefCell::new(None);
        let masked = |y: &Vector| {
            if y.norm() > n_radius {
                return 0.0;
            }
            match self.apply(f, r, t, y) {
                Ok(v) => v,
                Err(e) => {
                    *latch.borrow_mut() = Some(e);
                    f64::NAN
                }
            }
        };
        let out = self.apply_field(&masked, s, r, x)?;
        if let Some(e) = latch.into_inner() {
            return Err(e);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientModel;
    use crate::testbank;
    use crate::weights::WeightSpec;
    use approx::assert_relative_eq;

    fn op(model: &str, scheme: QuadScheme) -> EvolutionOperator {
        let m = CoefficientModel::builtin(model, None).unwrap();
        EvolutionOperator::new(m, WeightSpec::polynomial(1).unwrap(), scheme)
    }

    fn gh(order: usize) -> QuadScheme {
        QuadScheme::GaussHermite { order }
    }

    fn x1(v: f64) -> Vector {
        Vector::from_element(1, v)
    }

    #[test]
    fn constants_are_preserved() {
        let op = op("ou1", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |_| 2.5).with_dim(1);
        for &(s, t, x) in &[(0.0, 1.0, 0.3), (0.5, 0.75, -1.0), (0.0, 0.0, 2.0)] {
            let v = op.apply(&f, s, t, &x1(x)).unwrap();
            assert_relative_eq!(v, 2.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn linear_functional_matches_mean_identity() {
        // f(y) = <v, y> gives <v, U x + g>.
        let m = CoefficientModel::constant(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.4, 0.0, -0.7]),
            Matrix::identity(2, 2),
            Vector::from_row_slice(&[0.2, -0.1]),
            (-5.0, 5.0),
        );
        let op = EvolutionOperator::new(m.clone(), WeightSpec::polynomial(1).unwrap(), gh(30));
        let v = Vector::from_row_slice(&[1.3, -0.5]);
        let vv = v.clone();
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, move |y: &Vector| vv.dot(y)).with_dim(2);
        let (s, t) = (0.2, 1.1);
        let x = Vector::from_row_slice(&[0.7, -0.2]);
        let st = flow::flow(&m, s, t, flow::DEFAULT_TOL).unwrap();
        let expected = v.dot(&st.mean(&x));
        let got = op.apply(&f, s, t, &x).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-10);
    }

    #[test]
    fn quadratic_matches_second_moment_identity() {
        // f(y) = |y|² gives |a|² + tr Q(t,s).
        let op = op("rotation", gh(30));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y.norm_squared()).with_dim(2);
        let (s, t) = (0.0, 0.8);
        let x = Vector::from_row_slice(&[1.0, 0.5]);
        let pf = op.prepared_flow(s, t).unwrap();
        let expected = pf.state.mean(&x).norm_squared() + pf.state.qc.trace();
        let got = op.apply(&f, s, t, &x).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn gradient_of_constant_vanishes() {
        let op = op("ou1", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |_| 3.0).with_dim(1);
        let g = op.gradient(&f, 0.0, 0.5, &x1(0.4)).unwrap();
        assert!(g.amax() < 1e-10, "gradient {g}");
    }

    #[test]
    fn gradient_of_coordinate_recovers_propagator_row() {
        let m = CoefficientModel::constant(
            Matrix::from_row_slice(2, 2, &[-0.5, 0.3, -0.2, -1.0]),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            (-5.0, 5.0),
        );
        let op = EvolutionOperator::new(m, WeightSpec::polynomial(1).unwrap(), gh(30));
        let (s, t) = (0.0, 0.9);
        let x = Vector::from_row_slice(&[0.3, -0.6]);
        let pf = op.prepared_flow(s, t).unwrap();
        for i in 0..2 {
            let w = WeightSpec::polynomial(1).unwrap();
            let f = WeightedFunction::new(w, move |y: &Vector| y[i]).with_dim(2);
            let g = op.gradient(&f, s, t, &x).unwrap();
            let row = pf.state.u.row(i).transpose();
            assert!((g - row).amax() < 1e-9);
        }
    }

    #[test]
    fn gradient_matches_finite_difference_of_apply() {
        let op = op("ou1", gh(60));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| (-0.5 * (y[0] - 0.3).powi(2)).exp())
            .with_dim(1);
        let (s, t) = (0.0, 0.4);
        for &xv in &[0.0, 0.5, -0.8] {
            let x = x1(xv);
            let g = op.gradient(&f, s, t, &x).unwrap()[0];
            let h = 1e-4;
            let fp = op.apply(&f, s, t, &x1(xv + h)).unwrap();
            let fm = op.apply(&f, s, t, &x1(xv - h)).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (g - fd).abs() <= (1e-6_f64).max(10.0 * h * h),
                "kernel {g} vs fd {fd}"
            );
        }
    }

    #[test]
    fn hessian_of_norm_squared_is_2_utu() {
        let m = CoefficientModel::constant(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.2, 0.0, -0.6]),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            (-5.0, 5.0),
        );
        let op = EvolutionOperator::new(m, WeightSpec::polynomial(1).unwrap(), gh(30));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y.norm_squared()).with_dim(2);
        let (s, t) = (0.0, 0.7);
        let x = Vector::from_row_slice(&[0.4, 0.1]);
        let pf = op.prepared_flow(s, t).unwrap();
        let expected = pf.state.u.transpose() * &pf.state.u * 2.0;
        let h = op.hessian(&f, s, t, &x).unwrap();
        assert!(
            (&h - &expected).amax() < 1e-8,
            "defect {}",
            (&h - &expected).amax()
        );
    }

    #[test]
    fn heat_cosine_closed_form_for_value_gradient_hessian() {
        // Heat model (A=0, Q=2): P f(x) = e^{-(t-s)} cos x for f = cos, so the
        // Hessian is -e^{-(t-s)} cos x.
        let op = op("heat", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y[0].cos()).with_dim(1);
        let (s, t) = (0.0, 0.6);
        let decay = (-(t - s) as f64).exp();
        for &xv in &[0.0, 0.7, -1.3] {
            let x = x1(xv);
            let v = op.apply(&f, s, t, &x).unwrap();
            assert_relative_eq!(v, decay * xv.cos(), epsilon = 1e-10);
            let g = op.gradient(&f, s, t, &x).unwrap()[0];
            assert_relative_eq!(g, -decay * xv.sin(), epsilon = 1e-8);
            let h = op.hessian(&f, s, t, &x).unwrap()[(0, 0)];
            assert_relative_eq!(h, -decay * xv.cos(), epsilon = 1e-7);
        }
    }

    #[test]
    fn third_derivative_heat_cosine_closed_form() {
        // D³ P cos = e^{-(t-s)} sin x under the heat model.
        let op = op("heat", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y[0].cos()).with_dim(1);
        let (s, t) = (0.0, 0.5);
        let decay = (-(t - s) as f64).exp();
        for &xv in &[0.3, -0.9] {
            let d3 = op.third_derivs(&f, s, t, &x1(xv)).unwrap()[0][(0, 0)];
            assert_relative_eq!(d3, decay * xv.sin(), epsilon = 1e-6);
        }
    }

    #[test]
    fn transfer_forms_agree_with_kernel_forms_on_smooth_function() {
        let op = op("ou1", gh(40));
        let f = testbank::by_name("gauss", 1, &WeightSpec::polynomial(1).unwrap()).unwrap();
        let (s, t) = (0.0, 0.8);
        let x = x1(0.4);
        let gk = op.gradient(&f, s, t, &x).unwrap();
        let gt = op.gradient_transfer(&f, s, t, &x).unwrap();
        assert!((gk - gt).amax() < 1e-9);
        let hk = op.hessian(&f, s, t, &x).unwrap();
        let ht = op.hessian_transfer(&f, s, t, &x).unwrap();
        let hm = op.hessian_mixed(&f, s, t, &x).unwrap();
        assert!((&hk - &ht).amax() < 1e-8);
        assert!((&hm - &ht).amax() < 1e-9);
    }

    #[test]
    fn derivative_kernels_refuse_below_the_floor() {
        let op = op("ou1", gh(20));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y[0]).with_dim(1);
        let err = op.gradient(&f, 0.0, 1e-8, &x1(0.0)).unwrap_err();
        assert!(matches!(err, EvolutionError::SingularCovariance { .. }));
        // while plain application still works at tiny gaps
        assert!(op.apply(&f, 0.0, 1e-8, &x1(0.2)).is_ok());
    }

    #[test]
    fn composition_defect_small_for_linear_and_smooth_functions() {
        let op = op("ou1", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let grid: Vec<Vector> = [-1.5, -0.5, 0.0, 0.8, 2.0].iter().map(|&v| x1(v)).collect();
        let f_lin = WeightedFunction::new(w, |y: &Vector| 2.0 * y[0]).with_dim(1);
        let d = op.compose_check(&f_lin, 0.0, 0.5, 1.0, &grid).unwrap();
        assert!(d < 1e-9, "linear defect {d}");
        let f_smooth = testbank::by_name("gauss", 1, &w).unwrap();
        let d = op.compose_check(&f_smooth, 0.0, 0.5, 1.0, &grid).unwrap();
        assert!(d < 1e-6, "smooth defect {d}");
    }

    #[test]
    fn truncation_converges_to_the_full_operator() {
        let op = op("ou1", gh(40));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, move |y: &Vector| w.value(y) * 0.5).with_dim(1);
        let (s, r, t) = (0.0, 0.5, 1.0);
        let x = x1(0.7);
        let full = op.apply(&f, s, t, &x).unwrap();
        let mut prev = f64::INFINITY;
        for &n in &[1.0, 2.0, 4.0, 8.0, 16.0] {
            let sn = op.truncated(&f, s, r, t, n, &x).unwrap();
            let diff = (sn - full).abs();
            assert!(diff <= prev + 1e-12, "not monotone at n={n}");
            prev = diff;
        }
        assert!(prev < 1e-8, "tail {prev}");
    }

    #[test]
    fn repeated_evaluation_is_bit_identical() {
        let op = op("rotation", gh(24));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| (y[0] * 1.3).sin() + y[1]).with_dim(2);
        let x = Vector::from_row_slice(&[0.4, -0.9]);
        let a = op.apply(&f, 0.0, 0.77, &x).unwrap();
        let b = op.apply(&f, 0.0, 0.77, &x).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn positivity_is_preserved() {
        let op = op("ou1", gh(30));
        let w = WeightSpec::polynomial(1).unwrap();
        let f = WeightedFunction::new(w, |y: &Vector| y[0].sin().abs()).with_dim(1);
        for &xv in &[-2.0, 0.0, 1.5] {
            let v = op.apply(&f, 0.0, 0.8, &x1(xv)).unwrap();
            assert!(v >= 0.0);
        }
    }

    #[test]
    fn normalization_at_random_arguments() {
        let op = op("periodic", gh(30));
        let w = WeightSpec::polynomial(1).unwrap();
        let one = WeightedFunction::new(w, |_| 1.0).with_dim(1);
        for i in 0..64 {
            let u = crate::linalg::radical_inverse(i + 1, 2);
            let v = crate::linalg::radical_inverse(i + 1, 3);
            let s = -2.0 + 3.0 * u;
            let t = s + 0.01 + 1.5 * v;
            let x = x1(-2.0 + 4.0 * crate::linalg::radical_inverse(i + 1, 5));
            let val = op.apply(&one, s, t, &x).unwrap();
            assert!((val - 1.0).abs() <= 1e-8, "P1 = {val} at ({s},{t})");
        }
    }
}
