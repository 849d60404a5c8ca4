//! Small dense linear-algebra and quadrature helpers shared by the other
//! modules: spectral norms, symmetric eigendecompositions, Gauss rules and
//! low-discrepancy point sets.

use nalgebra::{DMatrix, DVector};

use crate::{Matrix, Vector};

/// Operator (spectral) norm, computed from the symmetric eigenproblem of
/// `MᵀM`. Matches the operator-norm statements used for the propagator and
/// covariance bounds.
pub fn spectral_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    let eig = gram.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .fold(0.0_f64, |acc, &l| acc.max(l.max(0.0)))
        .sqrt()
}

/// Symmetrized copy `(M + Mᵀ)/2`.
pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of a (numerically) symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigen {
    pub values: Vector,
    pub vectors: Matrix,
}

impl SymEigen {
    pub fn new(m: &Matrix) -> Self {
        let eig = symmetrize(m).symmetric_eigen();
        SymEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    pub fn lambda_min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn lambda_max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `V diag(φ(λ_i)) Vᵀ` for an arbitrary spectral map `φ`.
    pub fn map(&self, phi: impl Fn(f64) -> f64) -> Matrix {
        let n = self.values.len();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            n,
            self.values.iter().map(|&l| phi(l)),
        ));
        &self.vectors * d * self.vectors.transpose()
    }

    /// Symmetric PSD square root; negative eigenvalues within roundoff are
    /// clamped to zero.
    pub fn sqrt_psd(&self) -> Matrix {
        self.map(|l| l.max(0.0).sqrt())
    }
}

/// Least-squares line fit `y ≈ slope·x + intercept` with the coefficient of
/// determination.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    LineFit {
        slope,
        intercept,
        r_squared,
    }
}

/// Gauss-Hermite rule for `∫ f(x) e^{-x²} dx`: Golub-Welsch on the symmetric
/// tridiagonal Jacobi matrix (0 diagonal, `sqrt(k/2)` off-diagonal).
/// Rules are memoized per order; computing one is an `order × order`
/// eigenproblem and sits on every quadrature path.
pub fn gauss_hermite(order: usize) -> std::sync::Arc<Vec<(f64, f64)>> {
    assert!(order >= 1);
    cached_rule(&HERMITE_CACHE, order, || {
        golub_welsch(
            order,
            |k| ((k as f64) / 2.0).sqrt(),
            std::f64::consts::PI.sqrt(),
        )
    })
}

/// Gauss-Legendre rule on `[-1, 1]` (total weight 2), memoized per order.
pub fn gauss_legendre(order: usize) -> std::sync::Arc<Vec<(f64, f64)>> {
    assert!(order >= 1);
    cached_rule(&LEGENDRE_CACHE, order, || {
        golub_welsch(
            order,
            |k| {
                let k = k as f64;
                k / (4.0 * k * k - 1.0).sqrt()
            },
            2.0,
        )
    })
}

type RuleCache = std::sync::OnceLock<std::sync::Mutex<std::collections::HashMap<usize, std::sync::Arc<Vec<(f64, f64)>>>>>;

static HERMITE_CACHE: RuleCache = std::sync::OnceLock::new();
static LEGENDRE_CACHE: RuleCache = std::sync::OnceLock::new();

fn cached_rule(
    cache: &RuleCache,
    order: usize,
    build: impl FnOnce() -> Vec<(f64, f64)>,
) -> std::sync::Arc<Vec<(f64, f64)>> {
    let map = cache.get_or_init(|| std::sync::Mutex::new(std::collections::HashMap::new()));
    if let Some(hit) = map.lock().unwrap().get(&order) {
        return hit.clone();
    }
    let rule = std::sync::Arc::new(build());
    map.lock()
        .unwrap()
        .entry(order)
        .or_insert(rule)
        .clone()
}

fn golub_welsch(order: usize, offdiag: impl Fn(usize) -> f64, total_weight: f64) -> Vec<(f64, f64)> {
    let mut jac = DMatrix::zeros(order, order);
    for k in 1..order {
        let b = offdiag(k);
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = jac.symmetric_eigen();
    let mut rule: Vec<(f64, f64)> = (0..order)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], total_weight * v0 * v0)
        })
        .collect();
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    rule
}

/// Radical-inverse (van der Corput) value of `i` in the given base.
pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut inv = 0.0;
    let mut denom = 1.0;
    let b = base as f64;
    while i > 0 {
        denom *= b;
        inv += (i % base) as f64 / denom;
        i /= base;
    }
    inv
}

const HALTON_BASES: [u64; 3] = [2, 3, 5];

/// Deterministic low-discrepancy points in the open unit ball, obtained by
/// rejection from the Halton sequence on the cube `[-1,1]^dim`.
pub fn unit_ball_points(dim: usize, n: usize) -> Vec<Vector> {
    assert!(dim >= 1 && dim <= HALTON_BASES.len());
    let mut pts = Vec::with_capacity(n);
    let mut i: u64 = 1;
    while pts.len() < n {
        let x = Vector::from_iterator(
            dim,
            (0..dim).map(|d| 2.0 * radical_inverse(i, HALTON_BASES[d]) - 1.0),
        );
        if x.norm() < 1.0 {
            pts.push(x);
        }
        i += 1;
    }
    pts
}

/// Deterministic directions on the unit sphere (normalized ball points away
/// from the origin).
pub fn unit_sphere_points(dim: usize, n: usize) -> Vec<Vector> {
    assert!(dim >= 1 && dim <= HALTON_BASES.len());
    if dim == 1 {
        return (0..n)
            .map(|i| Vector::from_element(1, if i % 2 == 0 { 1.0 } else { -1.0 }))
            .collect();
    }
    let mut pts = Vec::with_capacity(n);
    let mut i: u64 = 1;
    while pts.len() < n {
        let x = Vector::from_iterator(
            dim,
            (0..dim).map(|d| 2.0 * radical_inverse(i, HALTON_BASES[d]) - 1.0),
        );
        let r = x.norm();
        if r > 0.1 && r < 1.0 {
            pts.push(x / r);
        }
        i += 1;
    }
    pts
}

/// Multi-indices of the given exact order in `dim` variables, in
/// lexicographic order.
pub fn multi_indices(dim: usize, order: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut current = vec![0u32; dim];
    fill(&mut out, &mut current, 0, order);
    fn fill(out: &mut Vec<Vec<u32>>, current: &mut Vec<u32>, pos: usize, remaining: u32) {
        if pos + 1 == current.len() {
            current[pos] = remaining;
            out.push(current.clone());
            return;
        }
        for k in (0..=remaining).rev() {
            current[pos] = k;
            fill(out, current, pos + 1, remaining - k);
        }
    }
    out
}

/// `log(Σ exp(l_i))` with the usual max shift.
pub fn log_sum_exp(terms: &[f64]) -> f64 {
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|&l| (l - m).exp()).sum::<f64>().ln()
}
