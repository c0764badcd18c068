//! The chain's Markov operators applied numerically: the one-step operator
//! on measures and on observables, the flow-averaging kernel G (expectation
//! along the flow at an exponential time), the jump-only kernel W, invariant
//! measure estimation along a long trajectory, and geometric decay
//! diagnostics in the Fortet-Mourier distance.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::observable::Observable;
use crate::quad;
use crate::sampler;
use crate::sim;
use crate::space::HybridState;
use crate::stats::{self, RunningMoments};
use crate::transport;

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: u64,
}

fn positive_samples(samples_per_atom: usize) -> Result<f64> {
    if samples_per_atom == 0 {
        return Err(Error::InvalidConfig(
            "samples_per_atom must be positive".into(),
        ));
    }
    Ok(1.0 / samples_per_atom as f64)
}

/// Monte Carlo push-forward of a measure through one step of the chain.
/// Each atom spawns `samples_per_atom` successors carrying its split weight.
pub fn apply_p<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    samples_per_atom: usize,
    rng: &mut R,
) -> Result<EmpiricalMeasure> {
    let share = positive_samples(samples_per_atom)?;
    let mut atoms = Vec::with_capacity(mu.len() * samples_per_atom);
    for (x, w) in mu.atoms() {
        for _ in 0..samples_per_atom {
            let (next, _) = sim::step(model, x, rng)?;
            atoms.push((next, w * share));
        }
    }
    EmpiricalMeasure::new(atoms)
}

/// Monte Carlo estimate of the dual action: the conditional expectation of
/// g after one step from x.
pub fn dual_p<R: Rng + ?Sized>(
    model: &ModelSpec,
    g: &Observable,
    x: &HybridState,
    n_mc: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if n_mc < 2 {
        return Err(Error::InsufficientSamples(
            "dual estimate needs at least 2 samples".into(),
        ));
    }
    let mut acc = RunningMoments::new();
    for _ in 0..n_mc {
        let (next, _) = sim::step(model, x, rng)?;
        acc.push(g.eval(&next));
    }
    Ok(McEstimate {
        mean: acc.mean(),
        se: acc.se(),
        n: acc.count(),
    })
}

/// Gg(y, i): the expectation of g along flow i from y at an Exp(lambda)
/// time. Affine observables use the closed-form mean pre-jump state; other
/// kinds integrate the exponentially weighted flow to `quad_tol`.
pub fn apply_g(model: &ModelSpec, g: &Observable, x: &HybridState, quad_tol: f64) -> Result<f64> {
    if let Some((a, b)) = g.affine_parts() {
        let mean_state = model.flow(x.i).exp_average(model.lambda, &x.y);
        let val = a
            .iter()
            .zip(mean_state.iter())
            .map(|(ak, yk)| ak * yk)
            .sum::<f64>()
            + b;
        return Ok(val);
    }
    let flow = model.flow(x.i);
    let lam = model.lambda;
    quad::integrate_exp_tail(
        |t| lam * g.eval(&HybridState::new(flow.eval(t, &x.y), x.i)),
        lam,
        quad_tol,
    )
}

/// Monte Carlo push-forward through the kernel behind G: every atom flows
/// for an independent Exp(lambda) time and keeps its index.
pub fn apply_g_measure<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    samples_per_atom: usize,
    rng: &mut R,
) -> Result<EmpiricalMeasure> {
    let share = positive_samples(samples_per_atom)?;
    let mut atoms = Vec::with_capacity(mu.len() * samples_per_atom);
    for (x, w) in mu.atoms() {
        for _ in 0..samples_per_atom {
            let t = sampler::draw_exp(rng, model.lambda);
            let y = model.eval_flow(x.i, t, &x.y);
            atoms.push((HybridState::new(y, x.i), w * share));
        }
    }
    EmpiricalMeasure::new(atoms)
}

/// Monte Carlo push-forward through the jump-only kernel W: perturbed jump
/// map and index switch applied at the atom itself, with no flow segment.
pub fn apply_w<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu: &EmpiricalMeasure,
    samples_per_atom: usize,
    rng: &mut R,
) -> Result<EmpiricalMeasure> {
    let share = positive_samples(samples_per_atom)?;
    let mut atoms = Vec::with_capacity(mu.len() * samples_per_atom);
    for (x, w) in mu.atoms() {
        for _ in 0..samples_per_atom {
            // a zero-length flow segment reduces the chain step to W itself
            let next = sim::step_with_interjump(model, x, 0.0, rng)?;
            atoms.push((next, w * share));
        }
    }
    EmpiricalMeasure::new(atoms)
}

/// One martingale increment of the centered additive functional: the integral
/// of g - center along the inter-jump segment from x, minus its conditional
/// expectation (G g(x) - center) / lambda. Summing these over a trajectory
/// gives a mean-zero series whose cumulative sums are a martingale.
pub fn martingale_increment(
    model: &ModelSpec,
    g: &Observable,
    center: f64,
    x: &HybridState,
    dt: f64,
    quad_tol: f64,
) -> Result<f64> {
    let seg = sim::flow_integral(model, g, x, dt, quad_tol)? - center * dt;
    let cond = (apply_g(model, g, x, quad_tol)? - center) / model.lambda;
    Ok(seg - cond)
}

/// Invariant estimates from one long trajectory.
#[derive(Debug, Clone)]
pub struct InvariantEstimate {
    /// Invariant law of the embedded post-jump chain: the trajectory average
    /// after burn-in.
    pub mu: EmpiricalMeasure,
    /// Invariant law of the continuous-time process, as `mu` pushed through
    /// the flow at independent exponential times.
    pub nu: EmpiricalMeasure,
    /// The same law estimated a second way, from a stratified occupation
    /// sample of the continuous path.
    pub nu_occupation: EmpiricalMeasure,
    /// Subsampled Fortet-Mourier distance between the two route estimates;
    /// shrinks like the Monte Carlo error if both estimate the same law.
    pub discrepancy: f64,
}

pub const DEFAULT_BURN_IN: usize = 10_000;

pub fn estimate_invariants<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: &HybridState,
    burn_in: usize,
    n_keep: usize,
    rng: &mut R,
) -> Result<InvariantEstimate> {
    if n_keep == 0 {
        return Err(Error::InvalidConfig("n_keep must be positive".into()));
    }
    let path = sim::simulate_embedded(model, x0, burn_in + n_keep, rng)?;
    let kept: Vec<HybridState> = (burn_in + 1..path.len()).map(|k| path.state(k)).collect();
    let mu = EmpiricalMeasure::from_states(kept)?;
    let nu = apply_g_measure(model, &mu, 1, rng)?;

    let cpath = sim::ContinuousPath::new(model, &path);
    let t0 = path.tau(burn_in);
    let t1 = path.last_tau();
    let width = (t1 - t0) / n_keep as f64;
    let cap = t1 - 1e-9 * (1.0 + t1.abs());
    let mut occ = Vec::with_capacity(n_keep);
    for k in 0..n_keep {
        let t = (t0 + (k as f64 + rng.gen::<f64>()) * width).min(cap);
        occ.push(cpath.eval(t)?);
    }
    let nu_occupation = EmpiricalMeasure::from_states(occ)?;

    let discrepancy = transport::fortet_mourier_sub(
        &nu,
        &nu_occupation,
        model.c,
        transport::DEFAULT_SUBSAMPLE,
        transport::DEFAULT_RESAMPLES,
        rng,
    )?;
    Ok(InvariantEstimate {
        mu,
        nu,
        nu_occupation,
        discrepancy,
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    /// Fitted per-step contraction ratio.
    pub q: f64,
    pub r2: f64,
    /// Points fitted before the curve reaches the noise floor; 0 means the
    /// whole curve sat at the floor and q defaults to 1.
    pub window: usize,
}

/// Distance-to-invariant curve with its geometric fit.
#[derive(Debug, Clone, Serialize)]
pub struct DecayReport {
    pub n: Vec<usize>,
    pub dfm: Vec<f64>,
    pub fit: DecayFit,
    /// Monte Carlo noise floor: distance between two independent subsamples
    /// of the invariant estimate itself.
    pub floor: f64,
}

impl DecayReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Track d_FM(mu0 P^n, mu_star) for n = 0..=n_steps on supports capped at
/// `subsample` atoms per side, and fit the geometric decay above the noise
/// floor.
pub fn ergodicity_decay<R: Rng + ?Sized>(
    model: &ModelSpec,
    mu0: &EmpiricalMeasure,
    mu_star: &EmpiricalMeasure,
    n_steps: usize,
    subsample: usize,
    rng: &mut R,
) -> Result<DecayReport> {
    if n_steps == 0 {
        return Err(Error::InvalidConfig("n_steps must be positive".into()));
    }
    if subsample == 0 || 2 * subsample > transport::LP_CAP {
        return Err(Error::InvalidConfig(format!(
            "subsample must be in 1..={}",
            transport::LP_CAP / 2
        )));
    }

    let capped = |mu: &EmpiricalMeasure, rng: &mut R| -> Result<EmpiricalMeasure> {
        let merged = mu.consolidated();
        if merged.len() > subsample {
            merged.subsample(subsample, rng)
        } else {
            Ok(merged)
        }
    };

    let star = capped(mu_star, rng)?;
    // two fresh resamples of the same estimate sit at pure Monte Carlo
    // distance from each other; that is the resolvable floor of the curve
    let fa = mu_star.subsample(subsample.min(mu_star.len()), rng)?;
    let fb = mu_star.subsample(subsample.min(mu_star.len()), rng)?;
    let floor = transport::fortet_mourier(&fa, &fb, model.c)?;

    let mut cur = capped(mu0, rng)?;
    // grow small starts into a full ensemble on the first transition, so
    // later distances measure the pushed-forward law and not one chain
    let fan_out = subsample.div_ceil(cur.len());
    let mut ns = Vec::with_capacity(n_steps + 1);
    let mut ds = Vec::with_capacity(n_steps + 1);
    for n in 0..=n_steps {
        ns.push(n);
        ds.push(transport::fortet_mourier(&cur, &star, model.c)?);
        if n < n_steps {
            cur = apply_p(model, &cur, if n == 0 { fan_out } else { 1 }, rng)?;
            if cur.len() > subsample {
                cur = cur.subsample(subsample, rng)?;
            }
        }
    }

    let fit = match stats::fit_geometric(&ds, floor) {
        Ok(f) => DecayFit {
            q: f.rate,
            r2: f.r2,
            window: f.window,
        },
        // nothing above the floor: no decay is resolvable, report flat
        Err(Error::InsufficientSamples(_)) => DecayFit {
            q: 1.0,
            r2: 0.0,
            window: 0,
        },
        Err(e) => return Err(e),
    };
    Ok(DecayReport {
        n: ns,
        dfm: ds,
        fit,
        floor,
    })
}
