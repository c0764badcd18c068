//! Iterated-logarithm statistics along one trajectory.
//!
//! The scaled partial sum of a centered observable over the embedded chain
//! and the scaled time integral over the continuous path are the two
//! quantities whose almost-sure fluctuation bands the contraction theory
//! pins down. The time statistic splits exactly into a martingale part, a
//! boundary remainder covering the stub after the last jump, and an embedded
//! chain part; this module computes the split, the martingale increment
//! series behind it, and the three variance scales (embedded long-run,
//! jump-level, and their combination) that calibrate the bands. A replica
//! driver assembles everything into one serializable report.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::f64::consts::E;

use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::model::ModelSpec;
use crate::observable::Observable;
use crate::operators::{self, McEstimate};
use crate::sampler::{self, SeedStream};
use crate::sim::{self, ContinuousPath, EmbeddedPath};
use crate::space::HybridState;
use crate::stats::{self, CompensatedSum, RunningMoments};

const QUAD_TOL: f64 = 1e-9;

/// sqrt(2 u ln ln u) for u above e, the normalization of both scaled
/// statistics; zero at or below e where the double logarithm is not positive.
fn lil_norm(u: f64) -> f64 {
    if u <= E {
        return 0.0;
    }
    (2.0 * u * u.ln().ln()).sqrt()
}

/// Scaled partial sum of the given values: sum / sqrt(2 n ln ln n), zero for
/// n at or below e.
pub fn s_discrete(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n <= E {
        return 0.0;
    }
    let mut acc = CompensatedSum::new();
    for &v in values {
        acc.add(v);
    }
    acc.value() / lil_norm(n)
}

/// Scaled time integral of the centered observable over [0, t]:
/// integral / sqrt(2 t ln ln t), zero for t at or below e.
pub fn s_continuous(
    path: &ContinuousPath,
    g: &CenteredObservable,
    t: f64,
    quad_tol: f64,
) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(Error::InvalidConfig(format!("evaluation time {t}")));
    }
    if t <= E {
        return Ok(0.0);
    }
    let total = path.integral(&g.base, 0.0, t, quad_tol)? - g.center * t;
    Ok(total / lil_norm(t))
}

/// An observable minus its invariant mean. The center is the pairing of the
/// base observable with the continuous-time invariant law, which coincides
/// with the pairing of its flow average with the embedded invariant law; the
/// constructor estimates it both ways and keeps the standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct CenteredObservable {
    #[serde(skip)]
    pub base: Observable,
    /// Name of the base observable, carried into reports.
    pub name: String,
    /// Operative center, from the flow average along the embedded chain.
    pub center: f64,
    pub center_se: f64,
    /// The same pairing sampled through one exponential flow draw per chain
    /// state; must agree with `center` within combined error.
    pub continuous_center: f64,
    pub continuous_center_se: f64,
}

impl CenteredObservable {
    /// Wrap a base observable around a known center, with zero stored error.
    /// For centers taken from closed forms or from an external fit.
    pub fn with_center(base: Observable, center: f64) -> Self {
        let name = base.name.clone();
        CenteredObservable {
            base,
            name,
            center,
            center_se: 0.0,
            continuous_center: center,
            continuous_center_se: 0.0,
        }
    }

    pub fn eval(&self, x: &HybridState) -> f64 {
        self.base.eval(x) - self.center
    }

    /// Bound on the centered observable's absolute value.
    pub fn sup_bound(&self) -> f64 {
        self.base.sup_bound + self.center.abs()
    }

    /// Exact scalar multiple where the base family is closed under scaling.
    pub fn scaled(&self, factor: f64) -> Option<CenteredObservable> {
        let base = self.base.try_scaled(factor)?;
        let name = base.name.clone();
        Some(CenteredObservable {
            base,
            name,
            center: factor * self.center,
            center_se: factor.abs() * self.center_se,
            continuous_center: factor * self.continuous_center,
            continuous_center_se: factor.abs() * self.continuous_center_se,
        })
    }
}

/// Center an observable on a fresh trajectory: run the embedded chain past
/// burn-in, average the exact flow average of g over the kept states, and
/// cross-check against a one-draw flow sample per state. Rejects observables
/// that are constant over the visited states and centers whose two estimates
/// disagree beyond three combined standard errors.
pub fn center_observable<R: Rng + ?Sized>(
    model: &ModelSpec,
    base: Observable,
    x0: &HybridState,
    burn_in: usize,
    n_keep: usize,
    rng: &mut R,
) -> Result<CenteredObservable> {
    if n_keep < 1000 {
        return Err(Error::InsufficientSamples(format!(
            "{n_keep} kept states to center an observable"
        )));
    }
    let path = sim::simulate_embedded(model, x0, burn_in + n_keep, rng)?;
    let mut exact = Vec::with_capacity(n_keep);
    let mut sampled = Vec::with_capacity(n_keep);
    for k in burn_in + 1..path.len() {
        let x = path.state(k);
        exact.push(operators::apply_g(model, &base, &x, QUAD_TOL)?);
        let t = sampler::draw_exp(rng, model.lambda);
        let yt = model.eval_flow(x.i, t, &x.y);
        sampled.push(base.eval(&HybridState::new(yt, x.i)));
    }
    if stats::sample_variance(&sampled) == 0.0 {
        return Err(Error::InvalidConfig(format!(
            "observable {} is constant over the invariant support",
            base.name
        )));
    }
    let emb = stats::batch_means(&exact, 32)?;
    let cont = stats::batch_means(&sampled, 32)?;
    let gap = (emb.mean - cont.mean).abs();
    let tol = 3.0 * emb.se.hypot(cont.se) + 1e-12;
    if gap > tol {
        return Err(Error::InvalidConfig(format!(
            "centering of {} disagrees across the two pairings: {:.6} vs {:.6} with gap {gap:.2e} over tolerance {tol:.2e}",
            base.name, emb.mean, cont.mean
        )));
    }
    let name = base.name.clone();
    Ok(CenteredObservable {
        base,
        name,
        center: emb.mean,
        center_se: emb.se,
        continuous_center: cont.mean,
        continuous_center_se: cont.se,
    })
}

/// Martingale increments of the centered additive functional along a path,
/// with their running sums.
#[derive(Debug, Clone)]
pub struct MartingaleSeries {
    /// Increments, one per jump; z[k] belongs to the move into state k+1.
    pub z: Vec<f64>,
    /// Running sums, m[0] = 0 and m[k] the sum of the first k increments.
    pub m: Vec<f64>,
}

/// Compute the first `n` martingale increments along the path: each pairs
/// the centered integral over one inter-jump segment against the conditional
/// flow average at the segment's start state.
pub fn martingale_series(
    model: &ModelSpec,
    path: &EmbeddedPath,
    n: usize,
    g: &CenteredObservable,
    quad_tol: f64,
) -> Result<MartingaleSeries> {
    if n == 0 || n + 1 > path.len() {
        return Err(Error::InvalidConfig(format!(
            "{n} increments requested from a path of {} states",
            path.len()
        )));
    }
    let mut z = Vec::with_capacity(n);
    let mut m = Vec::with_capacity(n + 1);
    m.push(0.0);
    let mut acc = CompensatedSum::new();
    for k in 0..n {
        let inc = operators::martingale_increment(
            model,
            &g.base,
            g.center,
            &path.state(k),
            path.dtau(k + 1),
            quad_tol,
        )?;
        z.push(inc);
        acc.add(inc);
        m.push(acc.value());
    }
    Ok(MartingaleSeries { z, m })
}

/// One variance estimate: the scale (square root), the variance itself, and
/// the standard error of the variance.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SigmaEstimate {
    pub value: f64,
    pub var: f64,
    pub var_se: f64,
}

impl SigmaEstimate {
    fn from_var(var: f64, var_se: f64) -> Self {
        SigmaEstimate {
            value: var.max(0.0).sqrt(),
            var,
            var_se,
        }
    }
}

/// Long-run variance of the flow-averaged observable along the embedded
/// chain, estimated two ways.
#[derive(Debug, Clone, Serialize)]
pub struct SigmaEmbeddedReport {
    /// Batch-means estimate.
    pub primary: SigmaEstimate,
    /// Truncated autocovariance series estimate.
    pub series: SigmaEstimate,
    /// Lags kept in the series; zero when the first lags already sit at the
    /// noise floor.
    pub truncation: usize,
    /// Fitted per-lag decay ratio of the autocovariances (zero when the
    /// series truncates immediately).
    pub decay_rate: f64,
    /// Whether the two estimates' two-standard-error intervals overlap.
    pub agree: bool,
}

/// Pick the series truncation: fit a geometric decay to the autocovariance
/// magnitudes and cut once the extrapolated tail drops under five percent of
/// the running sum. Lags already at the noise floor truncate immediately; a
/// fit that will not decay is refused.
fn series_truncation(gamma: &[f64], n_samples: usize) -> Result<(usize, f64)> {
    let g0 = gamma[0];
    if g0 <= 0.0 {
        return Ok((0, 0.0));
    }
    let noise = 3.0 * g0 / (n_samples as f64).sqrt();
    let above = gamma[1..].iter().take_while(|v| v.abs() > noise).count();
    if above == 0 {
        return Ok((0, 0.0));
    }
    if above < 3 {
        // the lags melt into the noise floor within two steps; everything
        // past the last resolvable lag is statistically zero, so cut there
        let rate = (gamma[above].abs() / gamma[above - 1].abs().max(noise)).min(1.0);
        return Ok((above, rate));
    }
    let l0 = above.min(30);
    let mags: Vec<f64> = gamma[1..=l0].iter().map(|v| v.abs()).collect();
    let fit = stats::fit_geometric(&mags, noise).map_err(|_| {
        Error::SeriesNotDecaying("no autocovariance prefix above the noise floor".into())
    })?;
    if !(fit.rate < 1.0) || fit.r2 < 0.5 {
        return Err(Error::SeriesNotDecaying(format!(
            "autocovariance ratio {:.3} with fit quality {:.2}",
            fit.rate, fit.r2
        )));
    }
    let mut running = g0;
    for k in 1..gamma.len() {
        running += 2.0 * gamma[k];
        // first omitted lag is k+1, whose fitted magnitude is amp * rate^k
        let tail = 2.0 * fit.amplitude * fit.rate.powi(k as i32) / (1.0 - fit.rate);
        if tail < 0.05 * running.abs().max(noise) {
            return Ok((k, fit.rate));
        }
    }
    Ok((gamma.len() - 1, fit.rate))
}

fn centered_autocovariances(h: &[f64], max_lag: usize) -> Vec<f64> {
    let m = stats::mean(h);
    (0..=max_lag)
        .map(|lag| stats::autocovariance(h, m, lag))
        .collect()
}

/// Long-run variance of h = (flow average of g) - center along the embedded
/// chain: the variance scale of the chain part of the time statistic. The
/// batch-means estimate is primary; the truncated autocovariance series is
/// the cross-check, with its spread taken over eight chain segments.
pub fn estimate_sigma_embedded<R: Rng + ?Sized>(
    model: &ModelSpec,
    g: &CenteredObservable,
    x0: &HybridState,
    burn_in: usize,
    chain_len: usize,
    n_batches: usize,
    rng: &mut R,
) -> Result<SigmaEmbeddedReport> {
    if chain_len < 2000 {
        return Err(Error::InsufficientSamples(format!(
            "{chain_len} chain steps for a long-run variance"
        )));
    }
    if n_batches < 8 {
        return Err(Error::InsufficientSamples(format!(
            "{n_batches} batches for a long-run variance"
        )));
    }
    let path = sim::simulate_embedded(model, x0, burn_in + chain_len, rng)?;
    let mut h = Vec::with_capacity(chain_len);
    for k in burn_in + 1..path.len() {
        h.push(operators::apply_g(model, &g.base, &path.state(k), QUAD_TOL)? - g.center);
    }

    let bm = stats::batch_means(&h, n_batches)?;
    let used = (bm.batches * bm.batch_len) as f64;
    let var_primary = bm.se * bm.se * used;
    let primary = SigmaEstimate::from_var(
        var_primary,
        var_primary * (2.0 / bm.batches as f64).sqrt(),
    );

    let max_lag = 200.min(h.len() / 50);
    let gamma = centered_autocovariances(&h, max_lag);
    let (truncation, decay_rate) = series_truncation(&gamma, h.len())?;
    let series_value = |gs: &[f64]| -> f64 {
        let k = truncation.min(gs.len() - 1);
        gs[0] + 2.0 * gs[1..=k].iter().sum::<f64>()
    };
    let var_series = series_value(&gamma);
    // spread of the series estimator across disjoint chain segments
    let n_seg = 8;
    let seg_len = h.len() / n_seg;
    let mut seg_vars = RunningMoments::new();
    if seg_len > 8 * (truncation + 1) {
        for s in 0..n_seg {
            let seg = &h[s * seg_len..(s + 1) * seg_len];
            let gseg = centered_autocovariances(seg, truncation.min(seg.len() / 4));
            seg_vars.push(series_value(&gseg));
        }
    }
    let series_se = if seg_vars.count() > 1 {
        seg_vars.se()
    } else {
        var_series * (2.0 / n_seg as f64).sqrt()
    };
    let series = SigmaEstimate::from_var(var_series, series_se);

    let agree = (primary.var - series.var).abs() <= 2.0 * (primary.var_se + series.var_se);
    Ok(SigmaEmbeddedReport {
        primary,
        series,
        truncation,
        decay_rate,
        agree,
    })
}

/// Variance of one martingale increment started from the invariant law:
/// the jump-level variance scale. Each pass draws one increment per atom of
/// the measure; the standard error is the spread across passes.
pub fn estimate_sigma_tilde<R: Rng + ?Sized>(
    model: &ModelSpec,
    g: &CenteredObservable,
    mu_star: &EmpiricalMeasure,
    passes: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if mu_star.is_empty() {
        return Err(Error::InsufficientSamples(
            "empty invariant sample for the jump-level variance".into(),
        ));
    }
    if passes < 2 {
        return Err(Error::InsufficientSamples(format!(
            "{passes} passes for the jump-level variance"
        )));
    }
    let mut acc = RunningMoments::new();
    for _ in 0..passes {
        let mut num = CompensatedSum::new();
        let mut den = CompensatedSum::new();
        for (x, w) in mu_star.atoms() {
            let dt = sampler::draw_exp(rng, model.lambda);
            let z = operators::martingale_increment(model, &g.base, g.center, x, dt, QUAD_TOL)?;
            num.add(w * z * z);
            den.add(*w);
        }
        acc.push(num.value() / den.value());
    }
    Ok(McEstimate {
        mean: acc.mean(),
        se: acc.se(),
        n: acc.count(),
    })
}

/// Combined fluctuation scale: sqrt(lambda) * (embedded scale / lambda +
/// jump scale). Both inputs are standard deviations; a pair of zeros means
/// the observable generates no fluctuation at all and is refused.
pub fn sigma_bar(sigma_embedded: f64, sigma_tilde: f64, lambda: f64) -> Result<f64> {
    if !(sigma_embedded >= 0.0) || !(sigma_tilde >= 0.0) || !(lambda > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "scales ({sigma_embedded}, {sigma_tilde}) at rate {lambda}"
        )));
    }
    if sigma_embedded == 0.0 && sigma_tilde == 0.0 {
        return Err(Error::DegenerateSigma);
    }
    Ok(lambda.sqrt() * (sigma_embedded / lambda + sigma_tilde))
}

/// Pooled squared martingale sum at one dyadic index.
#[derive(Debug, Clone, Serialize)]
pub struct HnPoint {
    pub n: usize,
    /// Mean of M_n^2 across replicas.
    pub h_sq: f64,
    pub se: f64,
    pub replicas: usize,
}

/// Cross-replica summary of the time statistic and its split at one
/// checkpoint time.
#[derive(Debug, Clone, Serialize)]
pub struct LilCheckpointRow {
    pub t: f64,
    /// Replicas whose jump count at t was large enough to evaluate the split.
    pub replicas: usize,
    pub mean_renewals: f64,
    /// Mean of sqrt(N_t ln ln N_t) / sqrt(t ln ln t), the factor converting
    /// the split back to the time normalization.
    pub prefactor_mean: f64,
    pub s_time_mean: f64,
    pub s_time_sd: f64,
    pub martingale_mean: f64,
    pub chain_mean: f64,
    /// Largest absolute boundary remainder across replicas.
    pub remainder_abs_max: f64,
    /// Largest remainder bound: sup|g centered| times the next inter-jump
    /// time, under the jump-count normalization.
    pub remainder_bound_max: f64,
    /// Largest absolute defect of the exact split identity across replicas.
    pub identity_gap_max: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TracePoint {
    pub t: f64,
    pub s: f64,
}

/// Everything the replica driver measures, serializable as one JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct LilReport {
    pub model: String,
    pub model_hash: String,
    pub seed: u64,
    pub horizon: f64,
    pub replicas: usize,
    pub observable: String,
    pub center: f64,
    pub checkpoints: Vec<LilCheckpointRow>,
    /// Growth of the pooled squared martingale sums at dyadic indices.
    pub h_sq: Vec<HnPoint>,
    /// Growth slope over the last decade of dyadic indices; should match the
    /// jump-level variance.
    pub h_sq_slope: f64,
    pub h_sq_slope_se: f64,
    pub sigma_embedded: SigmaEmbeddedReport,
    /// Jump-level variance (mean is the variance, not the scale).
    pub sigma_tilde: McEstimate,
    pub sigma_bar: f64,
    /// Time window of the envelope scan.
    pub envelope_window: (f64, f64),
    pub envelope_sup_mean: f64,
    pub envelope_inf_mean: f64,
    pub envelope_sup_max: f64,
    /// Mean running sup divided by the combined scale.
    pub envelope_sup_normalized: f64,
    /// Cross-replica variance of the time average integral / sqrt(t) at the
    /// horizon, the central-limit surrogate.
    pub clt_time_variance: f64,
    /// Surrogate variance over the squared combined scale.
    pub clt_ratio: f64,
    /// First martingale increments of the first replica.
    pub z_head: Vec<f64>,
    /// Scaled statistic of the first replica over the envelope grid, kept
    /// only when full traces are requested.
    pub trace: Option<Vec<TracePoint>>,
}

impl LilReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

struct CheckpointSample {
    n_t: usize,
    s_time: f64,
    prefactor: f64,
    martingale: f64,
    remainder: f64,
    remainder_bound: f64,
    chain: f64,
    identity_gap: f64,
}

struct ReplicaSummary {
    checkpoints: Vec<Option<CheckpointSample>>,
    dyadic: Vec<(usize, f64)>,
    growth_slope: Option<f64>,
    clt_value: f64,
    sup: f64,
    inf: f64,
    z_head: Vec<f64>,
    trace: Vec<TracePoint>,
}

const ENV_GRID: usize = 96;
const Z_HEAD: usize = 64;
const AUX_BURN: usize = 2_000;
const AUX_KEEP: usize = 20_000;
const AUX_CHAIN: usize = 40_000;
const AUX_BATCHES: usize = 32;
const TILDE_PASSES: usize = 4;

fn replica_run(
    model: &ModelSpec,
    g: &CenteredObservable,
    x0: &HybridState,
    horizon: f64,
    checkpoint_ts: &[f64],
    env_ts: &[f64],
    seed: u64,
    replica: u64,
) -> Result<ReplicaSummary> {
    let mut rng = SeedStream::new(seed).rng(replica + 1);
    let path = sim::simulate_to_horizon(model, x0, horizon, &mut rng)?;
    let cpath = ContinuousPath::new(model, &path);
    let n_total = cpath.renewal_count(horizon)?;
    if n_total < 8 {
        return Err(Error::InsufficientSamples(format!(
            "{n_total} jumps inside the horizon"
        )));
    }
    let series = martingale_series(model, &path, n_total, g, QUAD_TOL)?;

    // prefix sums of the centered flow average along the chain
    let mut chain_prefix = Vec::with_capacity(n_total + 1);
    chain_prefix.push(0.0);
    let mut acc = CompensatedSum::new();
    for k in 0..n_total {
        acc.add(operators::apply_g(model, &g.base, &path.state(k), QUAD_TOL)? - g.center);
        chain_prefix.push(acc.value());
    }

    // one cumulative integral walk over all evaluation times
    let mut all_ts: Vec<f64> = checkpoint_ts.iter().chain(env_ts.iter()).copied().collect();
    all_ts.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    all_ts.dedup();
    let mut cum = Vec::with_capacity(all_ts.len());
    let mut prev = 0.0;
    let mut walk = CompensatedSum::new();
    for &t in &all_ts {
        walk.add(cpath.integral(&g.base, prev, t, QUAD_TOL)?);
        cum.push(walk.value());
        prev = t;
    }
    let cum_at = |t: f64| -> f64 {
        let idx = all_ts.partition_point(|&v| v < t);
        cum[idx]
    };

    let mut checkpoints = Vec::with_capacity(checkpoint_ts.len());
    for &t in checkpoint_ts {
        let n_t = cpath.renewal_count(t)?;
        if n_t < 3 {
            checkpoints.push(None);
            continue;
        }
        let norm_n = lil_norm(n_t as f64);
        let norm_t = lil_norm(t);
        let s_time = (cum_at(t) - g.center * t) / norm_t;
        let martingale = series.m[n_t] / norm_n;
        let tau_n = path.tau(n_t);
        let stub = cpath.integral(&g.base, tau_n, t, QUAD_TOL)? - g.center * (t - tau_n);
        let remainder = stub / norm_n;
        let remainder_bound = g.sup_bound() * path.dtau(n_t + 1) / norm_n;
        let chain = chain_prefix[n_t] / norm_n / model.lambda;
        let prefactor = norm_n / norm_t;
        let identity_gap = (s_time - prefactor * (martingale + remainder + chain)).abs();
        checkpoints.push(Some(CheckpointSample {
            n_t,
            s_time,
            prefactor,
            martingale,
            remainder,
            remainder_bound,
            chain,
            identity_gap,
        }));
    }

    let mut dyadic = Vec::new();
    let mut n = 2usize;
    while n <= n_total {
        dyadic.push((n, series.m[n]));
        n *= 2;
    }
    let max_dyadic = dyadic.last().map(|&(n, _)| n).unwrap_or(0);
    let decade: Vec<&(usize, f64)> = dyadic
        .iter()
        .filter(|&&(n, _)| 10 * n >= max_dyadic)
        .collect();
    let growth_slope = if decade.len() >= 3 {
        let xs: Vec<f64> = decade.iter().map(|&&(n, _)| n as f64).collect();
        let ys: Vec<f64> = decade.iter().map(|&&(_, m)| m * m).collect();
        stats::fit_line(&xs, &ys).ok().map(|f| f.slope)
    } else {
        None
    };

    let trace: Vec<TracePoint> = env_ts
        .iter()
        .map(|&t| TracePoint {
            t,
            s: (cum_at(t) - g.center * t) / lil_norm(t),
        })
        .collect();
    let sup = trace.iter().map(|p| p.s).fold(f64::NEG_INFINITY, f64::max);
    let inf = trace.iter().map(|p| p.s).fold(f64::INFINITY, f64::min);
    let clt_value = (cum_at(horizon) - g.center * horizon) / horizon.sqrt();

    let z_head = series.z.iter().take(Z_HEAD).copied().collect();
    Ok(ReplicaSummary {
        checkpoints,
        dyadic,
        growth_slope,
        clt_value,
        sup,
        inf,
        z_head,
        trace,
    })
}

/// Run independent replicas of the process to a common horizon and assemble
/// the fluctuation report: the time statistic and its exact split at dyadic
/// checkpoints, running envelopes over the last decade, growth of the
/// squared martingale sums, the three variance scales, and the central-limit
/// surrogate. Replicas run in parallel on dedicated seed streams and are
/// reduced in replica order, so the report is a pure function of the seed.
pub fn lil_diagnostics(
    model: &ModelSpec,
    g: &CenteredObservable,
    x0: &HybridState,
    horizon: f64,
    replicas: usize,
    seed: u64,
    full_traces: bool,
) -> Result<LilReport> {
    if !(horizon >= 40.0) || !horizon.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "horizon {horizon} is too short for checkpointing"
        )));
    }
    if replicas < 2 {
        return Err(Error::InvalidConfig(format!(
            "{replicas} replicas cannot give cross-replica spreads"
        )));
    }

    let k_max = ((horizon / 20.0).log2().floor() as usize).clamp(1, 12);
    let checkpoint_ts: Vec<f64> = (0..=k_max)
        .rev()
        .map(|k| horizon / (1u64 << k) as f64)
        .collect();
    let t_lo = horizon / 10.0;
    let ratio = horizon / t_lo;
    let env_ts: Vec<f64> = (0..ENV_GRID)
        .map(|j| {
            if j + 1 == ENV_GRID {
                horizon
            } else {
                t_lo * ratio.powf(j as f64 / (ENV_GRID - 1) as f64)
            }
        })
        .collect();

    let summaries: Vec<ReplicaSummary> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| replica_run(model, g, x0, horizon, &checkpoint_ts, &env_ts, seed, r))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(checkpoint_ts.len());
    for (idx, &t) in checkpoint_ts.iter().enumerate() {
        let present: Vec<&CheckpointSample> = summaries
            .iter()
            .filter_map(|s| s.checkpoints[idx].as_ref())
            .collect();
        if present.is_empty() {
            continue;
        }
        let mut s_time = RunningMoments::new();
        let mut renewals = RunningMoments::new();
        let mut prefactor = RunningMoments::new();
        let mut mart = RunningMoments::new();
        let mut chain = RunningMoments::new();
        let mut rem_max = 0.0f64;
        let mut bound_max = 0.0f64;
        let mut gap_max = 0.0f64;
        for c in &present {
            s_time.push(c.s_time);
            renewals.push(c.n_t as f64);
            prefactor.push(c.prefactor);
            mart.push(c.martingale);
            chain.push(c.chain);
            rem_max = rem_max.max(c.remainder.abs());
            bound_max = bound_max.max(c.remainder_bound);
            gap_max = gap_max.max(c.identity_gap);
        }
        rows.push(LilCheckpointRow {
            t,
            replicas: present.len(),
            mean_renewals: renewals.mean(),
            prefactor_mean: prefactor.mean(),
            s_time_mean: s_time.mean(),
            s_time_sd: s_time.sd(),
            martingale_mean: mart.mean(),
            chain_mean: chain.mean(),
            remainder_abs_max: rem_max,
            remainder_bound_max: bound_max,
            identity_gap_max: gap_max,
        });
    }

    let mut pool: BTreeMap<usize, RunningMoments> = BTreeMap::new();
    for s in &summaries {
        for &(n, m) in &s.dyadic {
            pool.entry(n).or_insert_with(RunningMoments::new).push(m * m);
        }
    }
    let h_sq: Vec<HnPoint> = pool
        .iter()
        .map(|(&n, acc)| HnPoint {
            n,
            h_sq: acc.mean(),
            se: acc.se(),
            replicas: acc.count() as usize,
        })
        .collect();
    let mut slopes = RunningMoments::new();
    for s in &summaries {
        if let Some(v) = s.growth_slope {
            slopes.push(v);
        }
    }
    if slopes.count() < 2 {
        return Err(Error::InsufficientSamples(
            "too few replicas reach the growth-fit decade".into(),
        ));
    }

    // variance scales from one auxiliary stream
    let mut aux = SeedStream::new(seed).rng(0);
    let inv = operators::estimate_invariants(model, x0, AUX_BURN, AUX_KEEP, &mut aux)?;
    let sigma_tilde = estimate_sigma_tilde(model, g, &inv.mu, TILDE_PASSES, &mut aux)?;
    let sigma_embedded =
        estimate_sigma_embedded(model, g, x0, AUX_BURN, AUX_CHAIN, AUX_BATCHES, &mut aux)?;
    let bar = sigma_bar(
        sigma_embedded.primary.value,
        sigma_tilde.mean.max(0.0).sqrt(),
        model.lambda,
    )?;

    let mut sup_acc = RunningMoments::new();
    let mut inf_acc = RunningMoments::new();
    let mut sup_max = f64::NEG_INFINITY;
    let mut clt = RunningMoments::new();
    for s in &summaries {
        sup_acc.push(s.sup);
        inf_acc.push(s.inf);
        sup_max = sup_max.max(s.sup);
        clt.push(s.clt_value);
    }
    let clt_time_variance = clt.variance();

    Ok(LilReport {
        model: model.name.clone(),
        model_hash: model.hash.clone(),
        seed,
        horizon,
        replicas,
        observable: g.name.clone(),
        center: g.center,
        checkpoints: rows,
        h_sq,
        h_sq_slope: slopes.mean(),
        h_sq_slope_se: slopes.se(),
        sigma_embedded,
        sigma_tilde,
        sigma_bar: bar,
        envelope_window: (t_lo, horizon),
        envelope_sup_mean: sup_acc.mean(),
        envelope_inf_mean: inf_acc.mean(),
        envelope_sup_max: sup_max,
        envelope_sup_normalized: sup_acc.mean() / bar,
        clt_time_variance,
        clt_ratio: clt_time_variance / (bar * bar),
        z_head: summaries[0].z_head.clone(),
        trace: full_traces.then(|| summaries[0].trace.clone()),
    })
}
