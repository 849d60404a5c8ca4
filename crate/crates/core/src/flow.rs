//! Joint integration of the propagator `U(t,s)`, shift `g(t,s)` and
//! accumulated covariance `Q(t,s)` as one matrix ODE system,
//!
//! ```text
//! ∂_t U  = A(t) U,            U(s,s)  = I
//! ∂_t g  = A(t) g + h(t),     g(s,s)  = 0
//! ∂_t Qc = A(t) Qc + Qc A(t)ᵀ + Q(t),  Qc(s,s) = 0
//! ```
//!
//! integrated by an explicit adaptive fourth-order Runge-Kutta scheme with
//! step-doubling error control and local extrapolation. One adaptive pass
//! yields all three objects; the defining integral of `Q(t,s)` is kept as a
//! test oracle only. `Qc` is symmetrized after every accepted step so PSD
//! factorizations downstream do not drift.

use thiserror::Error;

use crate::coeffs::{CoefficientModel, CoeffsError};
use crate::linalg::{self, SymEigen};
use crate::{Matrix, Vector};

/// Default local error tolerance per step.
pub const DEFAULT_TOL: f64 = 1e-10;
const SAFETY: f64 = 0.9;
const MAX_GROWTH: f64 = 4.0;
const MIN_SHRINK: f64 = 0.1;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Coeffs(#[from] CoeffsError),
    #[error("time ordering: need s <= t, got s = {s}, t = {t}")]
    TimeOrder { s: f64, t: f64 },
    #[error("adaptive integration stalled at time {t} with step {h:.3e} (tol {tol:.3e})")]
    StepFailure { t: f64, h: f64, tol: f64 },
    #[error("need at least {need} (s,t) pairs spanning a decade of t-s, got {got}")]
    InsufficientSamples { need: usize, got: usize },
    #[error("accumulated covariance is numerically degenerate (lambda_min = {lambda_min:.3e})")]
    DegenerateCovariance { lambda_min: f64 },
}

/// The triple `(U, g, Qc)` at `(s, t)` with the extreme eigenvalues of `Qc`.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub s: f64,
    pub t: f64,
    pub u: Matrix,
    pub g: Vector,
    pub qc: Matrix,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

impl FlowState {
    /// Gaussian mean at base point `x`: `U(t,s) x + g(t,s)`.
    pub fn mean(&self, x: &Vector) -> Vector {
        &self.u * x + &self.g
    }

    pub fn delta(&self) -> f64 {
        self.t - self.s
    }

    /// Spectral norm of the propagator.
    pub fn u_norm(&self) -> f64 {
        linalg::spectral_norm(&self.u)
    }

    /// `||Q(t,s)^{-1/2}||`, from the symmetric eigenproblem.
    pub fn inv_sqrt_norm(&self) -> Result<f64, FlowError> {
        if self.lambda_min <= 0.0 {
            return Err(FlowError::DegenerateCovariance {
                lambda_min: self.lambda_min,
            });
        }
        Ok(1.0 / self.lambda_min.sqrt())
    }
}

/// Fitted decay constants of the propagator and covariance bounds:
/// `||U(t,s)|| <= M e^{-ω(t-s)}` and
/// `||Q(t,s)^{-1/2}|| <= H e^{-ω₋(t-s)} / (t-s)^{1/2}` with `ω₋ = min(0, ω)`.
#[derive(Clone, Copy, Debug)]
pub struct DecayConstants {
    pub m: f64,
    pub omega: f64,
    pub omega_minus: f64,
    pub h: f64,
    /// Quality of the log-linear fit of `||U||` against `t-s`.
    pub r_squared: f64,
}

/// Integrates the joint system from `(I, 0, 0)` at time `s` up to `t`.
pub fn flow(
    model: &CoefficientModel,
    s: f64,
    t: f64,
    tol: f64,
) -> Result<FlowState, FlowError> {
    model.check_domain(s)?;
    model.check_domain(t)?;
    if t < s {
        return Err(FlowError::TimeOrder { s, t });
    }
    let n = model.dim();
    let mut state = JointState {
        u: Matrix::identity(n, n),
        g: Vector::zeros(n),
        qc: Matrix::zeros(n, n),
    };
    if t > s {
        integrate(model, s, t, tol, &mut state)?;
    }
    let eig = SymEigen::new(&state.qc);
    Ok(FlowState {
        s,
        t,
        u: state.u,
        g: state.g,
        qc: state.qc,
        lambda_max: eig.lambda_max(),
        lambda_min: eig.lambda_min(),
    })
}

#[derive(Clone)]
struct JointState {
    u: Matrix,
    g: Vector,
    qc: Matrix,
}

impl JointState {
    fn axpy(&mut self, c: f64, d: &JointDeriv) {
        self.u += &d.u * c;
        self.g += &d.g * c;
        self.qc += &d.qc * c;
    }

    fn max_abs(&self) -> f64 {
        self.u.amax().max(self.qc.amax()).max(if self.g.is_empty() {
            0.0
        } else {
            self.g.amax()
        })
    }

    fn max_abs_diff(&self, other: &JointState) -> f64 {
        let du = (&self.u - &other.u).amax();
        let dq = (&self.qc - &other.qc).amax();
        let dg = (&self.g - &other.g).amax();
        du.max(dq).max(dg)
    }
}

struct JointDeriv {
    u: Matrix,
    g: Vector,
    qc: Matrix,
}

fn deriv(model: &CoefficientModel, t: f64, y: &JointState) -> JointDeriv {
    let a = model.a_unchecked(t);
    let q = model.q_unchecked(t);
    let h = model.h_unchecked(t);
    JointDeriv {
        u: &a * &y.u,
        g: &a * &y.g + h,
        qc: &a * &y.qc + &y.qc * a.transpose() + q,
    }
}

fn rk4_step(model: &CoefficientModel, t: f64, h: f64, y: &JointState) -> JointState {
    let k1 = deriv(model, t, y);
    let mut y2 = y.clone();
    y2.axpy(0.5 * h, &k1);
    let k2 = deriv(model, t + 0.5 * h, &y2);
    let mut y3 = y.clone();
    y3.axpy(0.5 * h, &k2);
    let k3 = deriv(model, t + 0.5 * h, &y3);
    let mut y4 = y.clone();
    y4.axpy(h, &k3);
    let k4 = deriv(model, t + h, &y4);
    let mut out = y.clone();
    out.axpy(h / 6.0, &k1);
    out.axpy(h / 3.0, &k2);
    out.axpy(h / 3.0, &k3);
    out.axpy(h / 6.0, &k4);
    out
}

fn integrate(
    model: &CoefficientModel,
    s: f64,
    t: f64,
    tol: f64,
    y: &mut JointState,
) -> Result<(), FlowError> {
    let span = t - s;
    let min_step = span * 1e-13;
    let mut time = s;
    let mut h = (span / 16.0).min(0.1);
    let mut steps = 0usize;
    while time < t {
        if steps > 1_000_000 {
            return Err(FlowError::StepFailure { t: time, h, tol });
        }
        steps += 1;
        h = h.min(t - time);
        let full = rk4_step(model, time, h, y);
        let half = rk4_step(model, time, 0.5 * h, y);
        let two_half = rk4_step(model, time + 0.5 * h, 0.5 * h, &half);
        // Richardson estimate of the O(h^5) local error of the halved path.
        let err = two_half.max_abs_diff(&full) / 15.0;
        let scale = tol * y.max_abs().max(1.0);
        if err <= scale || h <= min_step {
            if h <= min_step && err > scale {
                return Err(FlowError::StepFailure { t: time, h, tol });
            }
            time += h;
            *y = two_half;
            // local extrapolation to fifth order
            let full_u = full.u;
            let full_g = full.g;
            let full_qc = full.qc;
            y.u += (&y.u - full_u) / 15.0;
            y.g += (&y.g - full_g) / 15.0;
            y.qc += (&y.qc - full_qc) / 15.0;
            y.qc = linalg::symmetrize(&y.qc);
        }
        let factor = if err > 0.0 {
            SAFETY * (scale / err).powf(0.2)
        } else {
            MAX_GROWTH
        };
        h *= factor.clamp(MIN_SHRINK, MAX_GROWTH);
        h = h.max(min_step);
    }
    Ok(())
}

/// Central-difference self-test of the backward derivative identity
/// `∂_s U(t,s) = -U(t,s) A(s)`; the residual must be `O(δ²)`.
pub fn backward_derivative_check(
    model: &CoefficientModel,
    s: f64,
    t: f64,
) -> Result<f64, FlowError> {
    backward_derivative_check_with(model, s, t, 1e-4)
}

pub fn backward_derivative_check_with(
    model: &CoefficientModel,
    s: f64,
    t: f64,
    delta: f64,
) -> Result<f64, FlowError> {
    if s >= t {
        return Err(FlowError::TimeOrder { s, t });
    }
    model.check_domain(s - delta)?;
    let tol = DEFAULT_TOL;
    let up = flow(model, s + delta, t, tol)?.u;
    let um = flow(model, s - delta, t, tol)?.u;
    let u = flow(model, s, t, tol)?.u;
    let a = model.a(s)?;
    let resid = (up - um) / (2.0 * delta) + u * a;
    Ok(linalg::spectral_norm(&resid))
}

/// Fits `(M, ω)` by least squares on `log ||U(t,s)||` against `t-s`, then
/// inflates `M` so every sample satisfies the bound; `H` is the max over
/// samples of `||Q(t,s)^{-1/2}|| (t-s)^{1/2} e^{ω₋(t-s)}`.
pub fn fit_decay_constants(
    model: &CoefficientModel,
    pairs: &[(f64, f64)],
    tol: f64,
) -> Result<DecayConstants, FlowError> {
    if pairs.len() < 8 {
        return Err(FlowError::InsufficientSamples {
            need: 8,
            got: pairs.len(),
        });
    }
    let deltas: Vec<f64> = pairs.iter().map(|&(s, t)| t - s).collect();
    let dmin = deltas.iter().cloned().fold(f64::INFINITY, f64::min);
    let dmax = deltas.iter().cloned().fold(0.0_f64, f64::max);
    if !(dmin > 0.0) || dmax / dmin < 10.0 {
        return Err(FlowError::InsufficientSamples {
            need: 8,
            got: pairs.len(),
        });
    }
    let mut states = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        states.push(flow(model, s, t, tol)?);
    }
    let xs: Vec<f64> = deltas.clone();
    let ys: Vec<f64> = states
        .iter()
        .map(|st| st.u_norm().max(1e-300).ln())
        .collect();
    let fit = linalg::fit_line(&xs, &ys);
    let omega = -fit.slope;
    let mut m = fit.intercept.exp().max(1.0);
    for (st, &d) in states.iter().zip(&deltas) {
        m = m.max(st.u_norm() * (omega * d).exp());
    }
    let omega_minus = omega.min(0.0);
    let mut h: f64 = 0.0;
    for (st, &d) in states.iter().zip(&deltas) {
        let inv_sqrt = st.inv_sqrt_norm()?;
        h = h.max(inv_sqrt * d.sqrt() * (omega_minus * d).exp());
    }
    Ok(DecayConstants {
        m,
        omega,
        omega_minus,
        h,
        r_squared: fit.r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::CoefficientModel;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model_zero_drift(n: usize) -> CoefficientModel {
        CoefficientModel::constant(
            Matrix::zeros(n, n),
            Matrix::identity(n, n),
            Vector::zeros(n),
            (-5.0, 5.0),
        )
    }

    fn model_scalar(a: f64, q: f64, h: f64) -> CoefficientModel {
        CoefficientModel::constant(
            Matrix::from_element(1, 1, a),
            Matrix::from_element(1, 1, q),
            Vector::from_element(1, h),
            (-5.0, 5.0),
        )
    }

    fn rotation_model() -> CoefficientModel {
        CoefficientModel::builtin("rotation", None).unwrap()
    }

    #[test]
    fn zero_drift_has_identity_propagator_and_linear_covariance() {
        // A=0, Q=I, h=0 over 0.5: U=I, g=0, Qc = 0.5 I (exact integral).
        let st = flow(&model_zero_drift(2), 0.0, 0.5, DEFAULT_TOL).unwrap();
        assert!((&st.u - Matrix::identity(2, 2)).amax() < 1e-12);
        assert!(st.g.amax() < 1e-14);
        assert!((&st.qc - Matrix::identity(2, 2) * 0.5).amax() < 1e-12);
    }

    #[test]
    fn coincident_times_give_initial_data() {
        let st = flow(&rotation_model(), 1.0, 1.0, DEFAULT_TOL).unwrap();
        assert_eq!(st.u, Matrix::identity(2, 2));
        assert_eq!(st.qc, Matrix::zeros(2, 2));
        assert_eq!(st.g, Vector::zeros(2));
    }

    #[test]
    fn scalar_closed_forms() {
        // A=-1, Q=2, h=1 over 1: U = e^{-1}, Qc = 1 - e^{-2}, g = 1 - e^{-1}.
        let st = flow(&model_scalar(-1.0, 2.0, 1.0), 0.0, 1.0, DEFAULT_TOL).unwrap();
        let e1 = (-1.0_f64).exp();
        // global error is a few local tolerances
        assert_relative_eq!(st.u[(0, 0)], e1, epsilon = 1e-9);
        assert_relative_eq!(st.qc[(0, 0)], 1.0 - (-2.0_f64).exp(), epsilon = 1e-9);
        assert_relative_eq!(st.g[0], 1.0 - e1, epsilon = 1e-9);
    }

    #[test]
    fn rotation_closed_form_over_a_range_of_gaps() {
        // U(t,s) = [[cos d, sin d], [-sin d, cos d]] for A = [[0,1],[-1,0]].
        let m = rotation_model();
        for &d in &[1e-3, 0.1, 0.7, 2.0] {
            let st = flow(&m, 0.3, 0.3 + d, DEFAULT_TOL).unwrap();
            let expected = Matrix::from_row_slice(2, 2, &[d.cos(), d.sin(), -d.sin(), d.cos()]);
            let defect = (&st.u - expected).amax();
            assert!(defect < 1e-10, "gap {d}: defect {defect}");
            // orthogonal propagator: Qc = d * I for Q = I
            assert!((&st.qc - Matrix::identity(2, 2) * d).amax() < 1e-10);
        }
    }

    #[test]
    fn covariance_matches_direct_quadrature_of_the_defining_integral() {
        // Oracle: composite Gauss-Legendre of U(t,r) Q(r) U(t,r)ᵀ over [s,t].
        let m = CoefficientModel::from_callables(
            2,
            (-5.0, 5.0),
            |t| Matrix::from_row_slice(2, 2, &[-1.0, 0.5 * t.sin(), 0.0, -0.5]),
            |t| {
                Matrix::from_row_slice(2, 2, &[1.5 + t.cos() * 0.3, 0.2, 0.2, 1.0])
            },
            |_| Vector::zeros(2),
        );
        let (s, t) = (0.2, 1.4);
        let st = flow(&m, s, t, 1e-12).unwrap();
        let rule = crate::linalg::gauss_legendre(24);
        let mut oracle = Matrix::zeros(2, 2);
        for &(xi, w) in rule.iter() {
            let r = 0.5 * (s + t) + 0.5 * (t - s) * xi;
            let u_tr = flow(&m, r, t, 1e-12).unwrap().u;
            let q = m.q(r).unwrap();
            oracle += &u_tr * q * u_tr.transpose() * (w * 0.5 * (t - s));
        }
        assert!(
            (&st.qc - &oracle).amax() < 1e-8,
            "defect {}",
            (&st.qc - &oracle).amax()
        );
    }

    #[test]
    fn backward_derivative_identity_constant_drift() {
        let m = CoefficientModel::constant(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.3, 0.0, -0.5]),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            (-5.0, 5.0),
        );
        let delta = 1e-4;
        let resid = backward_derivative_check_with(&m, 0.5, 1.5, delta).unwrap();
        let a = m.a(0.5).unwrap();
        let u = flow(&m, 0.5, 1.5, DEFAULT_TOL).unwrap().u;
        let bound = 10.0
            * delta
            * delta
            * crate::linalg::spectral_norm(&a).powi(2)
            * crate::linalg::spectral_norm(&u);
        assert!(resid <= bound.max(1e-9), "resid {resid}, bound {bound}");
    }

    #[test]
    fn backward_derivative_identity_zero_drift() {
        let resid = backward_derivative_check(&model_zero_drift(2), 0.0, 1.0).unwrap();
        assert!(resid < 1e-9, "resid {resid}");
    }

    #[test]
    fn backward_derivative_residual_decays_quadratically_for_rotation() {
        let m = rotation_model();
        let r1 = backward_derivative_check_with(&m, 0.0, 1.0, 2e-3).unwrap();
        let r2 = backward_derivative_check_with(&m, 0.0, 1.0, 1e-3).unwrap();
        // halving delta divides the residual by about 4
        let ratio = r1 / r2;
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    fn decade_pairs(s0: f64, n: usize) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let d = 0.01 * (400.0_f64).powf(i as f64 / (n - 1) as f64);
                (s0, s0 + d)
            })
            .collect()
    }

    #[test]
    fn decay_fit_recovers_scalar_contraction_rate() {
        // ||U|| = e^{-a d} exactly, so the fit recovers omega = a, M ~ 1.
        let a = 0.8;
        let m = model_scalar(-a, 1.0, 0.0);
        let fit = fit_decay_constants(&m, &decade_pairs(0.0, 12), DEFAULT_TOL).unwrap();
        assert!((fit.omega - a).abs() <= 0.02 * a, "omega {}", fit.omega);
        assert!(fit.m >= 1.0 && fit.m <= 1.05, "M {}", fit.m);
    }

    #[test]
    fn decay_fit_zero_drift_recovers_h_about_one() {
        // Qc = d I so ||Qc^{-1/2}|| sqrt(d) = 1 exactly.
        let m = model_zero_drift(2);
        let fit = fit_decay_constants(&m, &decade_pairs(0.0, 10), DEFAULT_TOL).unwrap();
        assert!((fit.h - 1.0).abs() < 0.02, "H {}", fit.h);
        assert!(fit.omega.abs() < 0.02);
    }

    #[test]
    fn decay_fit_rotation_has_unit_norm_propagator() {
        let fit =
            fit_decay_constants(&rotation_model(), &decade_pairs(0.0, 12), DEFAULT_TOL).unwrap();
        assert!(fit.omega.abs() <= 0.02, "omega {}", fit.omega);
        assert!((fit.m - 1.0).abs() <= 0.02, "M {}", fit.m);
    }

    #[test]
    fn insufficient_samples_are_rejected() {
        let m = model_scalar(-1.0, 1.0, 0.0);
        assert!(matches!(
            fit_decay_constants(&m, &decade_pairs(0.0, 5), DEFAULT_TOL),
            Err(FlowError::InsufficientSamples { .. })
        ));
        // 8 pairs but no decade of spread
        let pairs: Vec<(f64, f64)> = (0..8).map(|i| (0.0, 1.0 + 0.01 * i as f64)).collect();
        assert!(matches!(
            fit_decay_constants(&m, &pairs, DEFAULT_TOL),
            Err(FlowError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn shift_respects_its_growth_envelope() {
        // |g(t,s)| <= W(t-s) e^{-omega_minus (t-s)} with
        // W(d) = M ||h||_inf / |omega| for omega != 0.
        let m = model_scalar(-1.0, 1.0, 0.7);
        let fit = fit_decay_constants(&m, &decade_pairs(0.0, 10), DEFAULT_TOL).unwrap();
        for &(s, t) in &decade_pairs(0.0, 10) {
            let st = flow(&m, s, t, DEFAULT_TOL).unwrap();
            let w = fit.m * 0.7 / fit.omega.abs();
            let bound = w * (-fit.omega_minus * (t - s)).exp();
            assert!(st.g.norm() <= bound * (1.0 + 1e-6), "g {} bound {bound}", st.g.norm());
        }
    }

    #[test]
    fn covariance_lower_bound_from_decay_constants() {
        // <Qc x, x>/(t-s) >= e^{2 omega_minus (t-s)} / H² on unit vectors.
        let m = CoefficientModel::constant(
            Matrix::from_row_slice(2, 2, &[-1.0, 0.2, -0.2, -0.6]),
            Matrix::identity(2, 2),
            Vector::zeros(2),
            (-5.0, 5.0),
        );
        let pairs = decade_pairs(0.0, 10);
        let fit = fit_decay_constants(&m, &pairs, DEFAULT_TOL).unwrap();
        let dirs = crate::linalg::unit_sphere_points(2, 16);
        for &(s, t) in &pairs {
            let st = flow(&m, s, t, DEFAULT_TOL).unwrap();
            let floor =
                (2.0 * fit.omega_minus * (t - s)).exp() / (fit.h * fit.h) * (t - s);
            for x in &dirs {
                let v = (&st.qc * x).dot(x);
                assert!(v >= floor * (1.0 - 1e-9), "v {v} floor {floor}");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn cocycle_property_on_random_triples(
            s in -1.0f64..0.5,
            d1 in 0.05f64..1.0,
            d2 in 0.05f64..1.0,
        ) {
            let m = CoefficientModel::from_callables(
                2,
                (-5.0, 5.0),
                |t| Matrix::from_row_slice(2, 2, &[-0.8, t.cos() * 0.4, -0.1, -1.2]),
                |_| Matrix::identity(2, 2),
                |t| Vector::from_row_slice(&[0.3 * t.sin(), 0.1]),
            );
            let r = s + d1;
            let t = s + d1 + d2;
            let u_ts = flow(&m, s, t, DEFAULT_TOL).unwrap().u;
            let u_tr = flow(&m, r, t, DEFAULT_TOL).unwrap().u;
            let u_rs = flow(&m, s, r, DEFAULT_TOL).unwrap().u;
            let defect = crate::linalg::spectral_norm(&(&u_ts - &u_tr * u_rs));
            prop_assert!(defect < 1e-8, "cocycle defect {}", defect);
        }

        #[test]
        fn covariance_stays_psd(s in -1.0f64..1.0, d in 1e-3f64..2.0) {
            let m = rotation_model();
            let st = flow(&m, s, s + d, DEFAULT_TOL).unwrap();
            prop_assert!(st.lambda_min >= -1e-10 * st.qc.amax());
        }
    }
}
