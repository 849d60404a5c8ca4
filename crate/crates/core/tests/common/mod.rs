//! Shared test oracles, independent of the library's evaluation paths.
//!
//! The backward-problem oracle is a Crank-Nicolson finite-difference march on
//! a truncated 1D domain; it touches only the raw coefficient closures, so it
//! shares nothing with the Gaussian-quadrature route it cross-checks.

use ou_evolution::Vector;

/// Crank-Nicolson solve of
/// `D_s u + 1/2 q(s) u_xx + (a(s) x + h(s)) u_x + f(s, x) = 0` on
/// `[-radius, radius]` backward from `u(T, ·) = phi`, with Dirichlet boundary
/// values supplied by the caller (typically the mild solution, so the
/// comparison is fair on the interior). In the forward variable `τ = T - s`
/// this is `v_τ = L v + f`.
///
/// Returns the spatial grid and the solution profile at each requested time.
#[allow(clippy::too_many_arguments)]
pub fn backward_fd_oracle(
    q: &dyn Fn(f64) -> f64,
    a_drift: &dyn Fn(f64) -> f64,
    h_shift: &dyn Fn(f64) -> f64,
    f_src: &dyn Fn(f64, f64) -> f64,
    phi: &dyn Fn(f64) -> f64,
    boundary: &dyn Fn(f64, f64) -> f64,
    a_time: f64,
    t_end: f64,
    radius: f64,
    m_nodes: usize,
    n_steps: usize,
    snapshot_times: &[f64],
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let m = m_nodes;
    let dx = 2.0 * radius / (m as f64 - 1.0);
    let xs: Vec<f64> = (0..m).map(|i| -radius + dx * i as f64).collect();
    let dt = (t_end - a_time) / n_steps as f64;

    // forward time tau = T - s
    let mut v: Vec<f64> = xs.iter().map(|&x| phi(x)).collect();
    let mut snapshots: Vec<Vec<f64>> = vec![Vec::new(); snapshot_times.len()];
    record(&mut snapshots, snapshot_times, t_end, a_time, t_end, &v);

    // interior tridiagonal apply of L(s): c_lo v_{i-1} + c_di v_i + c_hi v_{i+1}
    let stencil = |s: f64, i: usize| -> (f64, f64, f64) {
        let p2 = 0.5 * q(s) / (dx * dx);
        let p1 = (a_drift(s) * xs[i] + h_shift(s)) / (2.0 * dx);
        (p2 - p1, -2.0 * p2, p2 + p1)
    };

    for k in 0..n_steps {
        let s_old = t_end - dt * k as f64;
        let s_new = t_end - dt * (k + 1) as f64;
        let s_mid = 0.5 * (s_old + s_new);

        // rhs = (I + dt/2 L(s_old)) v + dt f(s_mid, x)
        let mut rhs = vec![0.0; m];
        for i in 1..m - 1 {
            let (lo, di, hi) = stencil(s_old, i);
            rhs[i] = v[i] + 0.5 * dt * (lo * v[i - 1] + di * v[i] + hi * v[i + 1])
                + dt * f_src(s_mid, xs[i]);
        }
        // Dirichlet values at the new level
        let vb_lo = boundary(s_new, xs[0]);
        let vb_hi = boundary(s_new, xs[m - 1]);

        // (I - dt/2 L(s_new)) v_new = rhs, Thomas algorithm on the interior
        let mut sub = vec![0.0; m];
        let mut diag = vec![1.0; m];
        let mut sup = vec![0.0; m];
        for i in 1..m - 1 {
            let (lo, di, hi) = stencil(s_new, i);
            sub[i] = -0.5 * dt * lo;
            diag[i] = 1.0 - 0.5 * dt * di;
            sup[i] = -0.5 * dt * hi;
        }
        rhs[0] = vb_lo;
        rhs[m - 1] = vb_hi;

        let mut c_star = vec![0.0; m];
        let mut d_star = vec![0.0; m];
        c_star[0] = sup[0] / diag[0];
        d_star[0] = rhs[0] / diag[0];
        for i in 1..m {
            let denom = diag[i] - sub[i] * c_star[i - 1];
            c_star[i] = sup[i] / denom;
            d_star[i] = (rhs[i] - sub[i] * d_star[i - 1]) / denom;
        }
        v[m - 1] = d_star[m - 1];
        for i in (0..m - 1).rev() {
            v[i] = d_star[i] - c_star[i] * v[i + 1];
        }

        record(&mut snapshots, snapshot_times, s_new, a_time, t_end, &v);
    }
    (xs, snapshots)
}

fn record(
    snapshots: &mut [Vec<f64>],
    wanted: &[f64],
    s_now: f64,
    a_time: f64,
    t_end: f64,
    v: &[f64],
) {
    let dt_half = 0.5 * (t_end - a_time) * 1e-9;
    for (k, &sw) in wanted.iter().enumerate() {
        if snapshots[k].is_empty() && s_now <= sw + dt_half {
            snapshots[k] = v.to_vec();
        }
    }
}

/// Halton-style deterministic low-discrepancy scalars for test sampling.
pub fn quasi_uniform(i: u64, base: u64) -> f64 {
    ou_evolution::linalg::radical_inverse(i, base)
}

pub fn vec1(x: f64) -> Vector {
    Vector::from_element(1, x)
}
