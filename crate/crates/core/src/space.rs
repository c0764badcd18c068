//! Hybrid state space: a continuous coordinate in a closed subset of R^d paired
//! with a discrete regime index. Distances combine the Euclidean norm on the
//! continuous part with a fixed penalty `c` for disagreeing indices:
//!
//!     rho_c((y1,i1),(y2,i2)) = |y1 - y2| + c * [i1 != i2],   c >= 1.
//!
//! The drift function used throughout the diagnostics is the distance to a
//! reference point, V(y,i) = |y - ybar|; it ignores the index.

use arrayvec::ArrayVec;
use serde::{Deserialize, Serialize};

/// Hard cap on the continuous dimension. Keeps states stack-allocated.
pub const MAX_DIM: usize = 16;

/// Continuous coordinate of a state; fixed-capacity, length = model dimension.
pub type StateVec = ArrayVec<f64, MAX_DIM>;

/// Build a `StateVec` from a slice. Panics if `xs.len() > MAX_DIM`.
pub fn svec(xs: &[f64]) -> StateVec {
    let mut v = StateVec::new();
    v.try_extend_from_slice(xs).expect("state dimension exceeds MAX_DIM");
    v
}

/// One point of the hybrid state space. `i` is 1-based, matching every
/// external format (configs, exports, reports).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridState {
    pub y: StateVec,
    pub i: usize,
}

impl HybridState {
    pub fn new(y: StateVec, i: usize) -> Self {
        HybridState { y, i }
    }

    pub fn from_slice(y: &[f64], i: usize) -> Self {
        HybridState { y: svec(y), i }
    }
}

/// Euclidean norm of the difference of two coordinate vectors.
pub fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

pub fn norm(a: &[f64]) -> f64 {
    let mut s = 0.0;
    for x in a {
        s += x * x;
    }
    s.sqrt()
}

/// The hybrid metric rho_c. Requires `c >= 1` so that index disagreement always
/// costs at least as much as one unit of continuous displacement.
pub fn rho_c(a: &HybridState, b: &HybridState, c: f64) -> f64 {
    debug_assert!(c >= 1.0);
    let idx = if a.i == b.i { 0.0 } else { c };
    norm_diff(&a.y, &b.y) + idx
}

/// Drift function V(y,i) = |y - ybar|.
pub fn lyapunov(x: &HybridState, ybar: &[f64]) -> f64 {
    norm_diff(&x.y, ybar)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn st(y: f64, i: usize) -> HybridState {
        HybridState::from_slice(&[y], i)
    }

    #[test]
    fn metric_matches_hand_values() {
        // equal indices: plain Euclidean distance
        assert_eq!(rho_c(&st(0.0, 1), &st(1.0, 1), 1.0), 1.0);
        // differing indices add exactly c
        assert_eq!(rho_c(&st(0.0, 1), &st(0.0, 2), 3.0), 3.0);
        assert_eq!(rho_c(&st(1.0, 1), &st(4.0, 2), 2.0), 5.0);
    }

    #[test]
    fn lyapunov_is_distance_to_reference() {
        assert_eq!(lyapunov(&st(4.0, 1), &[1.0]), 3.0);
        assert_eq!(lyapunov(&st(4.0, 7), &[1.0]), 3.0); // index plays no role
    }

    #[test]
    fn multidim_norm() {
        let a = HybridState::from_slice(&[0.0, 3.0], 1);
        let b = HybridState::from_slice(&[4.0, 0.0], 1);
        assert_eq!(rho_c(&a, &b, 1.0), 5.0);
    }

    #[test]
    fn metric_axioms_on_random_probes() {
        use crate::sampler::SeedStream;
        use rand::Rng;
        let mut rng = SeedStream::new(31).rng(0);
        let c = 2.5;
        let mut probe = |rng: &mut rand_chacha::ChaCha12Rng| {
            let y = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
            HybridState::from_slice(&y, rng.gen_range(1..=3))
        };
        for _ in 0..500 {
            let (a, b, d) = (probe(&mut rng), probe(&mut rng), probe(&mut rng));
            assert_eq!(rho_c(&a, &a, c), 0.0);
            assert_eq!(rho_c(&a, &b, c), rho_c(&b, &a, c));
            assert!((a == b) == (rho_c(&a, &b, c) == 0.0));
            assert!(rho_c(&a, &b, c) <= rho_c(&a, &d, c) + rho_c(&d, &b, c) + 1e-12);
        }
    }
}
