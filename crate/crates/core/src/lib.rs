//! Numerical toolkit for nonautonomous Ornstein-Uhlenbeck evolution operators
//! in weighted spaces of continuous functions on R^N.
//!
//! The operator family `P_{s,t}` acts on a function `f` by averaging it
//! against the Gaussian law of the linear stochastic flow driven by
//! time-dependent coefficients `(A(t), Q(t), h(t))`:
//!
//! ```text
//! P_{s,t} f(x) = ∫ f(y) N(U(t,s)x + g(t,s), Q(t,s))(dy)
//! ```
//!
//! where `U` is the propagator of `x' = A(t)x`, `g` the accumulated shift and
//! `Q(t,s)` the accumulated covariance. The crate provides:
//!
//! - [`coeffs`]: coefficient models and validation of the standing hypotheses;
//! - [`flow`]: joint integration of `(U, g, Q(t,s))` and decay-constant fits;
//! - [`gaussmeasure`]: Gaussian measures, tensor Gauss-Hermite quadrature and
//!   Monte Carlo sampling;
//! - [`weights`]: polynomial and exponential weights, empirical weighted sup
//!   and Hölder norms;
//! - [`evolution`]: evaluation of `P_{s,t} f` and its spatial derivatives up
//!   to third order through smoothing kernels and interval splitting;
//! - [`cauchy`]: the nonhomogeneous backward Cauchy problem by the
//!   mild-solution formula, with PDE residual diagnostics;
//! - [`estimates`]: empirical verification of smoothing rates, growth
//!   envelopes, the exponential-weight blow-up and compactness decay;
//! - [`testbank`]: the named test-function bank used by experiments and the
//!   command line.

pub mod cauchy;
pub mod coeffs;
pub mod estimates;
pub mod evolution;
pub mod flow;
pub mod gaussmeasure;
pub mod linalg;
pub mod testbank;
pub mod weights;

/// Dense dynamically sized column vector used throughout.
pub type Vector = nalgebra::DVector<f64>;
/// Dense dynamically sized matrix used throughout.
pub type Matrix = nalgebra::DMatrix<f64>;
