//! Adaptive Gauss-Legendre quadrature.
//!
//! A 15-point rule is applied per panel; a panel is accepted when bisecting it
//! changes the value by less than the local share of the tolerance, otherwise
//! it is split. The 15-point rule is exact through degree 29, so smooth
//! integrands (flows composed with observables, exponential weights) converge
//! in very few panels. Nodes and weights are computed once by Newton iteration
//! on the Legendre polynomial rather than hard-coded.

use crate::error::{Error, Result};
use std::sync::OnceLock;

const N: usize = 15;
const MAX_DEPTH: u32 = 48;
// Hard cap on bisections per call: turns an integrand the tolerance cannot
// resolve (noise, hidden discontinuity) into an error instead of a hang.
const MAX_PANELS: u64 = 60_000;

/// Relative tolerance used by default throughout the crate.
pub const QUAD_TOL: f64 = 1e-10;

fn legendre_nodes() -> &'static ([f64; N], [f64; N]) {
    static TABLE: OnceLock<([f64; N], [f64; N])> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut nodes = [0.0; N];
        let mut weights = [0.0; N];
        let n = N as f64;
        for k in 0..N {
            // Chebyshev-like initial guess, then Newton on P_N(x) = 0.
            let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre_p_dp(x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, dp) = legendre_p_dp(x);
            nodes[k] = x;
            weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    })
}

/// Value and derivative of the degree-N Legendre polynomial at x.
fn legendre_p_dp(x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 2..=N {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let dp = (N as f64) * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Single 15-point Gauss-Legendre panel over [a, b].
pub fn gl15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = legendre_nodes();
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = 0.0;
    for k in 0..N {
        acc += weights[k] * f(mid + half * nodes[k]);
    }
    acc * half
}

fn adapt<F: FnMut(f64) -> f64>(
    f: &mut F,
    a: f64,
    b: f64,
    whole: f64,
    eps: f64,
    floor: f64,
    panels: &mut u64,
    depth: u32,
) -> Result<f64> {
    if *panels == 0 {
        return Err(Error::QuadratureFailure(
            "panel budget exhausted; integrand too rough for the tolerance".into(),
        ));
    }
    *panels -= 1;
    let m = 0.5 * (a + b);
    let left = gl15(f, a, m);
    let right = gl15(f, m, b);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::QuadratureFailure(format!(
            "non-finite panel on [{a}, {b}]"
        )));
    }
    // floor keeps the per-level tolerance split from chasing targets below
    // the rounding noise of the integrand itself
    let accept = eps.max(floor);
    if delta.abs() <= accept || (b - a).abs() < 1e-15 * (1.0 + a.abs()) {
        return Ok(left + right + delta / 63.0);
    }
    if depth >= MAX_DEPTH {
        // Deep recursion with a still-large defect means the integrand is not
        // resolvable at this tolerance (kink, singularity, noise).
        if delta.abs() > 1e3 * accept {
            return Err(Error::QuadratureFailure(format!(
                "panel [{a}, {b}] did not converge (defect {delta:.3e})"
            )));
        }
        return Ok(left + right);
    }
    let half_eps = 0.5 * eps;
    Ok(adapt(f, a, m, left, half_eps, floor, panels, depth + 1)?
        + adapt(f, m, b, right, half_eps, floor, panels, depth + 1)?)
}

/// Integrate `f` over [a, b] to relative tolerance `rel_tol` (absolute floor
/// scaled by a first coarse pass).
pub fn integrate<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let coarse = gl15(&mut f, a, b);
    if !coarse.is_finite() {
        return Err(Error::QuadratureFailure("non-finite coarse pass".into()));
    }
    let scale = coarse.abs().max(1e-300);
    let eps = rel_tol * scale;
    let floor = 32.0 * f64::EPSILON * scale;
    let mut panels = MAX_PANELS;
    adapt(&mut f, a, b, coarse, eps, floor, &mut panels, 0)
}

/// Integrate `f` over [a, b] to an absolute tolerance. Use for integrands
/// built from differences of near-equal quantities: their values carry
/// absolute rounding noise, so a relative target tied to a tiny integral
/// would chase noise forever.
pub fn integrate_abs<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, abs_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let coarse = gl15(&mut f, a, b);
    if !coarse.is_finite() {
        return Err(Error::QuadratureFailure("non-finite coarse pass".into()));
    }
    let floor = 32.0 * f64::EPSILON * coarse.abs();
    let mut panels = MAX_PANELS;
    adapt(&mut f, a, b, coarse, abs_tol, floor, &mut panels, 0)
}

/// Integrate `exp(-lambda t) f(t)` over [0, inf). The tail beyond `40/lambda`
/// is below 5e-18 of the weight mass and is dropped.
pub fn integrate_exp_tail<F: FnMut(f64) -> f64>(mut f: F, lambda: f64, rel_tol: f64) -> Result<f64> {
    debug_assert!(lambda > 0.0);
    let cutoff = 40.0 / lambda;
    integrate(|t| (-lambda * t).exp() * f(t), 0.0, cutoff, rel_tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12).unwrap();
        // antiderivative x^4/4 - x^2 + x
        let exact = (81.0 / 4.0 - 9.0 + 3.0) - (0.25 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn exponential_weight_matches_closed_form() {
        // int_0^inf lambda e^{-lambda t} e^{-t} dt = lambda / (lambda + 1)
        for lambda in [0.5, 1.0, 2.0, 7.5] {
            let v = integrate_exp_tail(|t| lambda * (-t).exp(), lambda, 1e-12).unwrap();
            assert!(
                (v - lambda / (lambda + 1.0)).abs() < 1e-11,
                "lambda={lambda}: {v}"
            );
        }
    }

    #[test]
    fn oscillatory_integrand_converges() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, 2.0, 1e-11).unwrap();
        let exact = (1.0 - (20.0f64).cos()) / 10.0;
        assert!((v - exact).abs() < 1e-10);
    }

    #[test]
    fn zero_length_interval_is_zero() {
        assert_eq!(integrate(|x| x.exp(), 1.3, 1.3, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn constant_is_exact() {
        let v = integrate(|_| 2.5, 0.0, 4.0, 1e-12).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }
}
