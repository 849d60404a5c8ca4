//! Named test functions used by the experiments and the command line.
//!
//! Functions accept any dimension; only the first one or two coordinates are
//! active where noted. The smooth entries carry hand-coded derivatives up to
//! third order; the rough entries are deliberately derivative-free.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::weights::{WeightSpec, WeightedFunction};
use crate::{Matrix, Vector};

/// Golden-ratio phase for lacunary sums; keeps the modes out of phase without
/// randomness.
const PHASE_STRIDE: f64 = 0.618_033_988_749_895;

pub fn names() -> &'static [&'static str] {
    &[
        "one", "coord1", "normsq", "cos1", "gauss", "gausshift", "tanh1", "sincos", "cubic",
        "weight", "bump", "psin5", "rough", "rough_c1",
    ]
}

/// Looks up a bank function by name in the given dimension and weight.
pub fn by_name(name: &str, dim: usize, weight: &WeightSpec) -> Option<WeightedFunction> {
    let w = *weight;
    let f = match name {
        "one" => WeightedFunction::new(w, |_| 1.0)
            .with_gradient(|x: &Vector| Vector::zeros(x.len()))
            .with_hessian(|x: &Vector| Matrix::zeros(x.len(), x.len()))
            .with_third(|x: &Vector| vec![Matrix::zeros(x.len(), x.len()); x.len()]),
        "coord1" => WeightedFunction::new(w, |x: &Vector| x[0])
            .with_gradient(|x: &Vector| {
                let mut g = Vector::zeros(x.len());
                g[0] = 1.0;
                g
            })
            .with_hessian(|x: &Vector| Matrix::zeros(x.len(), x.len()))
            .with_third(|x: &Vector| vec![Matrix::zeros(x.len(), x.len()); x.len()]),
        "normsq" => WeightedFunction::new(w, |x: &Vector| x.norm_squared())
            .with_gradient(|x: &Vector| x * 2.0)
            .with_hessian(|x: &Vector| Matrix::identity(x.len(), x.len()) * 2.0)
            .with_third(|x: &Vector| vec![Matrix::zeros(x.len(), x.len()); x.len()]),
        "cos1" => WeightedFunction::new(w, |x: &Vector| x[0].cos())
            .with_gradient(|x: &Vector| {
                let mut g = Vector::zeros(x.len());
                g[0] = -x[0].sin();
                g
            })
            .with_hessian(|x: &Vector| {
                let mut h = Matrix::zeros(x.len(), x.len());
                h[(0, 0)] = -x[0].cos();
                h
            })
            .with_third(|x: &Vector| {
                let n = x.len();
                let mut t = vec![Matrix::zeros(n, n); n];
                t[0][(0, 0)] = x[0].sin();
                t
            }),
        "gauss" => WeightedFunction::new(w, |x: &Vector| (-0.5 * x.norm_squared()).exp())
            .with_gradient(|x: &Vector| -x * (-0.5 * x.norm_squared()).exp())
            .with_hessian(|x: &Vector| {
                let v = (-0.5 * x.norm_squared()).exp();
                (x * x.transpose() - Matrix::identity(x.len(), x.len())) * v
            })
            .with_third(|x: &Vector| {
                let n = x.len();
                let v = (-0.5 * x.norm_squared()).exp();
                (0..n)
                    .map(|k| {
                        Matrix::from_fn(n, n, |i, j| {
                            let del = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
                            (del(i, j) * x[k] + del(i, k) * x[j] + del(j, k) * x[i]
                                - x[i] * x[j] * x[k])
                                * v
                        })
                    })
                    .collect()
            }),
        // sin(x1)cos(x2) in dim >= 2, sin(x1) in dim 1; derivatives via the
        // quarter-turn identity d^k sin(x) = sin(x + k π/2).
        "sincos" => {
            let trig = move |x: &Vector, k1: u32, k2: u32| -> f64 {
                let a = (x[0] + k1 as f64 * FRAC_PI_2).sin();
                if x.len() >= 2 {
                    a * (x[1] + FRAC_PI_2 + k2 as f64 * FRAC_PI_2).sin()
                } else if k2 == 0 {
                    a
                } else {
                    0.0
                }
            };
            WeightedFunction::new(w, move |x: &Vector| trig(x, 0, 0))
                .with_gradient(move |x: &Vector| {
                    Vector::from_fn(x.len(), |i, _| match i {
                        0 => trig(x, 1, 0),
                        1 => trig(x, 0, 1),
                        _ => 0.0,
                    })
                })
                .with_hessian(move |x: &Vector| {
                    Matrix::from_fn(x.len(), x.len(), |i, j| {
                        let k1 = (i == 0) as u32 + (j == 0) as u32;
                        let k2 = (i == 1) as u32 + (j == 1) as u32;
                        if i > 1 || j > 1 {
                            0.0
                        } else {
                            trig(x, k1, k2)
                        }
                    })
                })
                .with_third(move |x: &Vector| {
                    let n = x.len();
                    (0..n)
                        .map(|k| {
                            Matrix::from_fn(n, n, |i, j| {
                                if i > 1 || j > 1 || k > 1 {
                                    return 0.0;
                                }
                                let k1 = (i == 0) as u32 + (j == 0) as u32 + (k == 0) as u32;
                                let k2 = (i == 1) as u32 + (j == 1) as u32 + (k == 1) as u32;
                                trig(x, k1, k2)
                            })
                        })
                        .collect()
                })
        }
        // x1³ - 3 x1 |x|²/n: cubic with simple exact derivatives.
        "cubic" => WeightedFunction::new(w, |x: &Vector| x[0].powi(3))
            .with_gradient(|x: &Vector| {
                let mut g = Vector::zeros(x.len());
                g[0] = 3.0 * x[0] * x[0];
                g
            })
            .with_hessian(|x: &Vector| {
                let mut h = Matrix::zeros(x.len(), x.len());
                h[(0, 0)] = 6.0 * x[0];
                h
            })
            .with_third(|x: &Vector| {
                let n = x.len();
                let mut t = vec![Matrix::zeros(n, n); n];
                t[0][(0, 0)] = 6.0;
                t
            }),
        // shifted Gaussian: breaks the symmetry of `gauss`
        "gausshift" => WeightedFunction::new(w, |x: &Vector| {
            let mut d = x.clone();
            d[0] -= 1.0;
            (-0.5 * d.norm_squared()).exp()
        }),
        "tanh1" => WeightedFunction::new(w, |x: &Vector| x[0].tanh()),
        // the weight itself; exact gradient, difference fallbacks beyond
        "weight" => {
            let wv = w;
            WeightedFunction::new(w, move |x: &Vector| wv.value(x))
                .with_gradient(move |x: &Vector| wv.gradient(x))
        }
        // smooth compactly supported bump on B(0,3)
        "bump" => WeightedFunction::new(w, |x: &Vector| {
            let r2 = x.norm_squared() / 9.0;
            if r2 >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - r2)).exp()
            }
        }),
        // p(x) sin(5|x|): bounded by the weight but with a kink at the origin
        "psin5" => {
            let wv = w;
            WeightedFunction::new(w, move |x: &Vector| wv.value(x) * (5.0 * x.norm()).sin())
        }
        "rough" => lacunary(w, 2.0, 0, 8, 0.0),
        "rough_c1" => lacunary_c1(w, 2.0, 0, 8, 0.0),
        _ => return None,
    };
    Some(f.with_name(name).with_dim(dim))
}

/// Lacunary sum `f(x) = p(x) Σ_k a_k cos(b^k x₁ + φ_k) / Σ_k a_k` with
/// `a_k = b^{k·tilt}`. With `tilt = 0` the normalized sum is bounded by 1 and
/// shows no smoothness gain across the scales `b^{-k_hi} … b^{-k_lo}`: it
/// saturates the `C_p` class over that window. Positive `tilt` shifts weight
/// toward the high frequencies.
pub fn lacunary(weight: WeightSpec, base: f64, k_lo: i32, k_hi: i32, tilt: f64) -> WeightedFunction {
    let modes: Vec<(f64, f64, f64)> = (k_lo..=k_hi)
        .map(|k| {
            let freq = base.powi(k);
            let amp = base.powf(k as f64 * tilt);
            let phase = 2.0 * PI * ((k - k_lo) as f64 * PHASE_STRIDE).fract();
            (freq, amp, phase)
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m.1).sum();
    let w = weight;
    WeightedFunction::new(weight, move |x: &Vector| {
        let s: f64 = modes
            .iter()
            .map(|&(freq, amp, phase)| amp * (freq * x[0] + phase).cos())
            .sum();
        w.value(x) * s / norm
    })
    .with_name("lacunary")
}

/// Once-integrated lacunary sum: `w₁(x) = Σ_k (a_k/b^k) sin(b^k x₁ + φ_k)`,
/// so the first derivative is the rough lacunary profile. Carries the exact
/// gradient of `p·w₁` and nothing beyond: a genuine `C¹` test function.
pub fn lacunary_c1(
    weight: WeightSpec,
    base: f64,
    k_lo: i32,
    k_hi: i32,
    tilt: f64,
) -> WeightedFunction {
    let modes: Vec<(f64, f64, f64)> = (k_lo..=k_hi)
        .map(|k| {
            let freq = base.powi(k);
            let amp = base.powf(k as f64 * tilt);
            let phase = 2.0 * PI * ((k - k_lo) as f64 * PHASE_STRIDE).fract();
            (freq, amp, phase)
        })
        .collect();
    let norm: f64 = modes.iter().map(|m| m.1).sum();
    let w = weight;
    let modes2 = modes.clone();
    WeightedFunction::new(weight, move |x: &Vector| {
        let s: f64 = modes
            .iter()
            .map(|&(freq, amp, phase)| amp / freq * (freq * x[0] + phase).sin())
            .sum();
        w.value(x) * s / norm
    })
    .with_gradient(move |x: &Vector| {
        let s: f64 = modes2
            .iter()
            .map(|&(freq, amp, phase)| amp / freq * (freq * x[0] + phase).sin())
            .sum();
        let ds: f64 = modes2
            .iter()
            .map(|&(freq, amp, phase)| amp * (freq * x[0] + phase).cos())
            .sum();
        let mut g = w.gradient(x) * (s / norm);
        g[0] += w.value(x) * ds / norm;
        g
    })
    .with_name("lacunary_c1")
}

/// The derivative-equipped smooth bank used by kernel-versus-difference
/// comparisons and the norm-equivalence study.
pub fn smooth_bank(dim: usize, weight: &WeightSpec) -> Vec<WeightedFunction> {
    ["one", "coord1", "normsq", "cos1", "gauss", "sincos", "cubic"]
        .iter()
        .map(|n| by_name(n, dim, weight).unwrap())
        .collect()
}

/// Ten functions normalized to (estimated) unit weighted sup norm; the
/// compactness and operator-bound experiments sample this set. All entries
/// are analytic (Gauss-Hermite error stays near roundoff), so composition
/// defects measure the operators, not the quadrature.
pub fn unit_bank(dim: usize, weight: &WeightSpec) -> Vec<WeightedFunction> {
    let base: Vec<WeightedFunction> = [
        "one", "coord1", "normsq", "cos1", "gauss", "gausshift", "tanh1", "sincos", "cubic",
        "weight",
    ]
    .iter()
    .map(|n| by_name(n, dim, weight).unwrap())
    .collect();
    base.into_iter()
        .map(|f| {
            let norm = f
                .weighted_sup_norm(20.0, 256)
                .map(|e| e.value)
                .unwrap_or(1.0)
                .max(1e-9);
            let name = f.name().unwrap_or("scaled").to_string();
            let inner = f.clone();
            let w = *f.weight();
            WeightedFunction::new(w, move |x: &Vector| inner.eval(x) / norm)
                .with_name(name)
                .with_dim(dim)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_listed_name_resolves() {
        let w = WeightSpec::polynomial(1).unwrap();
        for n in names() {
            assert!(by_name(n, 2, &w).is_some(), "missing {n}");
        }
        assert!(by_name("nope", 1, &w).is_none());
    }

    #[test]
    fn exact_derivatives_agree_with_differences() {
        let w = WeightSpec::polynomial(1).unwrap();
        let pts: Vec<Vector> = vec![
            Vector::from_row_slice(&[0.3, -0.7]),
            Vector::from_row_slice(&[1.1, 0.4]),
            Vector::from_row_slice(&[0.0, 0.0]),
        ];
        for name in ["cos1", "gauss", "sincos", "normsq", "cubic", "coord1"] {
            let f = by_name(name, 2, &w).unwrap();
            let defect = f.derivative_consistency(&pts);
            assert!(defect < 5e-6, "{name}: defect {defect}");
        }
    }

    #[test]
    fn lacunary_c1_gradient_is_consistent() {
        let w = WeightSpec::polynomial(1).unwrap();
        let f = lacunary_c1(w, 2.0, 0, 6, 0.0).with_dim(1);
        let pts = vec![Vector::from_element(1, 0.37), Vector::from_element(1, -1.2)];
        assert!(f.derivative_consistency(&pts) < 2e-4);
    }

    #[test]
    fn unit_bank_is_normalized() {
        let w = WeightSpec::polynomial(1).unwrap();
        let bank = unit_bank(1, &w);
        assert_eq!(bank.len(), 10);
        for f in &bank {
            let est = f.weighted_sup_norm(20.0, 256).unwrap().value;
            assert!(est <= 1.0 + 1e-9, "{:?} has norm {est}", f.name());
        }
    }

    #[test]
    fn bump_is_compactly_supported_and_smooth_inside() {
        let w = WeightSpec::polynomial(1).unwrap();
        let f = by_name("bump", 1, &w).unwrap();
        assert_eq!(f.eval(&Vector::from_element(1, 3.5)), 0.0);
        assert_eq!(f.eval(&Vector::from_element(1, 3.0)), 0.0);
        assert!(f.eval(&Vector::from_element(1, 0.0)) > 0.9);
        assert!(f.eval(&Vector::from_element(1, 2.9)) < 1e-3);
    }
}
