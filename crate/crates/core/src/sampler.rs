//! Random draws and seeded stream management.
//!
//! Every run derives its generators from a root seed and a stream id, so
//! replicas can run in parallel and still replay bit-for-bit. Within one
//! chain step the draw order is fixed: inter-jump time, then noise, then jump
//! parameter, then switch target.

use crate::error::{Error, Result};
use crate::space::{svec, StateVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use sha2::{Digest, Sha256};

/// Proposal cap for every rejection loop in the crate.
pub const MAX_REJECT: u64 = 100_000;

/// Factory for independent, replayable generator streams.
#[derive(Debug, Clone, Copy)]
pub struct SeedStream {
    root: u64,
}

impl SeedStream {
    pub fn new(root: u64) -> Self {
        Self { root }
    }

    pub fn root(&self) -> u64 {
        self.root
    }

    /// Generator for one stream. Streams with distinct ids are independent;
    /// the same (root, id) pair always yields the same sequence.
    pub fn rng(&self, stream_id: u64) -> ChaCha12Rng {
        let mut h = Sha256::new();
        h.update(b"jumpflow.stream.v1");
        h.update(self.root.to_le_bytes());
        h.update(stream_id.to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha12Rng::from_seed(seed)
    }
}

/// Exponential inter-jump time, strictly positive.
pub fn draw_exp<R: Rng + ?Sized>(rng: &mut R, lambda: f64) -> f64 {
    debug_assert!(lambda > 0.0);
    loop {
        let u: f64 = rng.gen();
        let t = -(-u).ln_1p() / lambda;
        if t > 0.0 {
            return t;
        }
    }
}

pub fn draw_uniform_in<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    let u: f64 = rng.gen();
    a + u * (b - a)
}

/// Density of the linearly tilted law on [a, b], f ~ 1 + slope*(theta-center),
/// normalized. The caller guarantees positivity of the tilt on [a, b].
pub fn tilted_pdf(theta: f64, a: f64, b: f64, slope: f64, center: f64) -> f64 {
    if theta < a || theta > b {
        return 0.0;
    }
    let z = (b - a) * (1.0 + slope * (0.5 * (a + b) - center));
    (1.0 + slope * (theta - center)) / z
}

/// Inverse-cdf draw from the linearly tilted law on [a, b].
pub fn draw_tilted<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64, slope: f64, center: f64) -> f64 {
    let u: f64 = rng.gen();
    if slope == 0.0 {
        return a + u * (b - a);
    }
    let psi = |t: f64| (t - a) + 0.5 * slope * ((t - center).powi(2) - (a - center).powi(2));
    let q = |t: f64| 1.0 + slope * (t - center);
    let z = psi(b);
    let target = u * z;
    // psi(theta) = target is quadratic; take the root inside [a, b] via the
    // numerically stable split, then polish with Newton.
    let qa = 0.5 * slope;
    let qb = 1.0 - slope * center;
    let qc = -a + 0.5 * slope * (center * center - (a - center).powi(2)) - target;
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
    let qq = -0.5 * (qb + qb.signum() * disc);
    let mut theta = [qq / qa, qc / qq]
        .into_iter()
        .filter(|r| r.is_finite())
        .min_by(|r1, r2| {
            let d1 = (r1 - a).min(b - r1);
            let d2 = (r2 - a).min(b - r2);
            d2.total_cmp(&d1)
        })
        .unwrap_or(0.5 * (a + b))
        .clamp(a, b);
    for _ in 0..2 {
        theta = (theta - (psi(theta) - target) / q(theta)).clamp(a, b);
    }
    theta
}

/// Beta(alpha, beta) transported to [a, b].
pub fn draw_beta_scaled<R: Rng + ?Sized>(
    rng: &mut R,
    alpha: f64,
    beta: f64,
    a: f64,
    b: f64,
) -> f64 {
    let d = Beta::new(alpha, beta).expect("validated at model build");
    a + d.sample(rng) * (b - a)
}

/// Density of the scaled Beta law on [a, b].
pub fn beta_scaled_pdf(theta: f64, alpha: f64, beta: f64, a: f64, b: f64) -> f64 {
    if theta <= a || theta >= b {
        return 0.0;
    }
    let x = (theta - a) / (b - a);
    let lb = crate::stats::gamma_fn(alpha + beta)
        / (crate::stats::gamma_fn(alpha) * crate::stats::gamma_fn(beta));
    lb * x.powf(alpha - 1.0) * (1.0 - x).powf(beta - 1.0) / (b - a)
}

/// Sample a categorical row by a cumulative walk; returns a 1-based index.
pub fn draw_index_from_row<R: Rng + ?Sized>(rng: &mut R, row: &[f64]) -> usize {
    debug_assert!(!row.is_empty());
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, &w) in row.iter().enumerate() {
        acc += w;
        if u < acc {
            return k + 1;
        }
    }
    row.len()
}

/// Uniform draw from the closed ball of radius `eps` in `dim` dimensions:
/// isotropic direction times radius eps * u^(1/dim).
pub fn draw_uniform_ball<R: Rng + ?Sized>(rng: &mut R, eps: f64, dim: usize) -> StateVec {
    let mut v = StateVec::new();
    let mut norm2 = 0.0;
    for _ in 0..dim {
        let g: f64 = StandardNormal.sample(rng);
        norm2 += g * g;
        v.push(g);
    }
    let u: f64 = rng.gen();
    let norm = norm2.sqrt();
    let r = eps * u.powf(1.0 / dim as f64);
    if norm == 0.0 {
        return svec(&vec![0.0; dim]);
    }
    for x in v.iter_mut() {
        *x *= r / norm;
    }
    v
}

/// Centered Gaussian with scale `sd`, conditioned on the ball of radius `eps`
/// by rejection.
pub fn draw_trunc_gauss<R: Rng + ?Sized>(
    rng: &mut R,
    sd: f64,
    eps: f64,
    dim: usize,
) -> Result<StateVec> {
    for _ in 0..MAX_REJECT {
        let mut v = StateVec::new();
        let mut norm2 = 0.0;
        for _ in 0..dim {
            let g: f64 = StandardNormal.sample(rng);
            let x = sd * g;
            norm2 += x * x;
            v.push(x);
        }
        if norm2.sqrt() <= eps {
            return Ok(v);
        }
    }
    Err(Error::RejectionStall(MAX_REJECT))
}

/// Generic accept-reject loop with the crate-wide proposal cap.
pub fn rejection_loop<R, T, P, A>(rng: &mut R, mut propose: P, mut accept: A) -> Result<T>
where
    R: Rng + ?Sized,
    P: FnMut(&mut R) -> T,
    A: FnMut(&T, &mut R) -> bool,
{
    for _ in 0..MAX_REJECT {
        let cand = propose(rng);
        if accept(&cand, rng) {
            return Ok(cand);
        }
    }
    Err(Error::RejectionStall(MAX_REJECT))
}

/// Draw from an arbitrary density on [a, b] by rejection against a uniform
/// envelope of height `cap`. The density must stay at or below the cap;
/// exceeding it is reported rather than silently producing a biased sample.
pub fn sample_density_rejection<R, F>(rng: &mut R, a: f64, b: f64, density: F, cap: f64) -> Result<f64>
where
    R: Rng + ?Sized,
    F: Fn(f64) -> f64,
{
    for _ in 0..MAX_REJECT {
        let x = draw_uniform_in(rng, a, b);
        let f = density(x);
        if f > cap {
            return Err(Error::DensityCapExceeded { found: f, cap });
        }
        let u: f64 = rng.gen();
        if u * cap < f {
            return Ok(x);
        }
    }
    Err(Error::RejectionStall(MAX_REJECT))
}
