//! Coupling of two copies of the embedded chain on a shared jump clock.
//!
//! Each move first tries to give both components the same randomness. The
//! inter-jump time and the noise are proposed once; the jump parameter is
//! drawn at the first component's flowed state and kept for both with
//! probability equal to the smaller-to-larger density ratio, and the next
//! flow index is shared the same way. When every stage accepts, the move is
//! flagged as coupled. When any stage rejects, the shared time is kept (the
//! coupled part of the kernel has the same time marginal for either
//! component), and each component completes its own jump independently from
//! the leftover kernel by rejection. Either way the marginal law of each
//! component is exactly the single-chain transition kernel.
//!
//! On top of the sampler sit the diagnostics the contraction argument needs:
//! hitting times of the coupling set, the set itself fitted from a drift
//! regression, one-step contraction and mass estimates over probe pairs, and
//! the decay of the gap between the components' martingale increments.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateSpace};
use crate::observable::{Observable, ObservableKind};
use crate::operators::{self, martingale_increment};
use crate::sampler::{self, SeedStream};
use crate::sim;
use crate::space::{lyapunov, rho_c, HybridState, StateVec};
use crate::stats::{fit_geometric, fit_line, GeometricFit, RunningMoments};

/// Both components after a coupled move, with the shared inter-jump time and
/// the flag telling whether the move came from the coupled part of the
/// kernel.
#[derive(Debug, Clone)]
pub struct CoupledState {
    pub x1: HybridState,
    pub x2: HybridState,
    /// Inter-jump time of the move that produced this state; the components
    /// always share it.
    pub dtau: f64,
    /// True when both components moved with the same (theta, h, j).
    pub zeta: bool,
}

impl CoupledState {
    pub fn start(x1: HybridState, x2: HybridState) -> Self {
        let zeta = equal_states(&x1, &x2);
        CoupledState {
            x1,
            x2,
            dtau: 0.0,
            zeta,
        }
    }

    /// Hybrid distance between the components.
    pub fn dist(&self, c: f64) -> f64 {
        rho_c(&self.x1, &self.x2, c)
    }
}

fn equal_states(a: &HybridState, b: &HybridState) -> bool {
    a.i == b.i && a.y == b.y
}

/// Bernoulli(min(1, ratio)) that consumes no randomness when the ratio is at
/// least one. Equal components then absorb exactly: every stage ratio is 1,
/// so the coupled move consumes the same stream as a single-chain move and
/// the components stay identical forever.
fn accept_ratio<R: Rng + ?Sized>(rng: &mut R, ratio: f64) -> bool {
    ratio >= 1.0 || rng.gen::<f64>() < ratio
}

fn land(model: &ModelSpec, theta: f64, flowed: &StateVec, h: &StateVec) -> Result<StateVec> {
    let mut z = model.jump(theta, flowed);
    for (k, hk) in h.iter().enumerate() {
        z[k] += hk;
    }
    if !model.contains(&z) {
        return Err(Error::StateEscapedY(format!(
            "coupled jump landed at {:?} (model {})",
            z.as_slice(),
            model.name
        )));
    }
    Ok(z)
}

/// One coupled transition with its own exponential clock.
pub fn coupled_step<R: Rng + ?Sized>(
    model: &ModelSpec,
    s: &CoupledState,
    rng: &mut R,
) -> Result<CoupledState> {
    let dt = sampler::draw_exp(rng, model.lambda);
    coupled_step_with_interjump(model, s, dt, rng)
}

/// The coupled move given the shared inter-jump time.
pub fn coupled_step_with_interjump<R: Rng + ?Sized>(
    model: &ModelSpec,
    s: &CoupledState,
    dt: f64,
    rng: &mut R,
) -> Result<CoupledState> {
    if equal_states(&s.x1, &s.x2) {
        let next = sim::step_with_interjump(model, &s.x1, dt, rng)?;
        return Ok(CoupledState {
            x1: next.clone(),
            x2: next,
            dtau: dt,
            zeta: true,
        });
    }
    let f1 = model.eval_flow(s.x1.i, dt, &s.x1.y);
    let f2 = model.eval_flow(s.x2.i, dt, &s.x2.y);
    let h = model.draw_noise(rng)?;
    let theta = model.draw_theta(rng, &f1);
    let p1 = model.theta_pdf(&f1, theta);
    let p2 = model.theta_pdf(&f2, theta);
    if accept_ratio(rng, p2 / p1) {
        let z1 = land(model, theta, &f1, &h)?;
        let z2 = land(model, theta, &f2, &h)?;
        let row1 = model.switch_row(s.x1.i, &z1);
        let row2 = model.switch_row(s.x2.i, &z2);
        let j = sampler::draw_index_from_row(rng, &row1);
        if accept_ratio(rng, row2[j - 1] / row1[j - 1]) {
            return Ok(CoupledState {
                x1: HybridState::new(z1, j),
                x2: HybridState::new(z2, j),
                dtau: dt,
                zeta: true,
            });
        }
    }
    // some stage rejected: the coupled part puts no more mass here, and its
    // time marginal is the same for either component, so the time is kept
    // and each component finishes its move from the leftover kernel
    let x1 = residual_move(model, s.x1.i, &f1, &f2, s.x2.i, rng)?;
    let x2 = residual_move(model, s.x2.i, &f2, &f1, s.x1.i, rng)?;
    Ok(CoupledState {
        x1,
        x2,
        dtau: dt,
        zeta: false,
    })
}

/// Proposal cap for the leftover sampler. Its acceptance probability scales
/// with the distance between the components, so nearly coalesced pairs need
/// many proposals on the (correspondingly rare) leftover branch.
const RESIDUAL_CAP: u64 = 10_000_000;

/// One component's jump conditioned on the coupled stages having rejected:
/// proposals from the component's own jump law, thinned by the probability
/// that the coupled stages would have accepted the candidate. The companion
/// landing is evaluated counterfactually at the candidate's (theta, h); the
/// thinned density is then exactly the single-chain law minus the coupled
/// part, so keeping the shared time leaves the component's marginal exact.
fn residual_move<R: Rng + ?Sized>(
    model: &ModelSpec,
    i_own: usize,
    f_own: &StateVec,
    f_other: &StateVec,
    i_other: usize,
    rng: &mut R,
) -> Result<HybridState> {
    for _ in 0..RESIDUAL_CAP {
        let h = model.draw_noise(rng)?;
        let theta = model.draw_theta(rng, f_own);
        let z_own = land(model, theta, f_own, &h)?;
        let row_own = model.switch_row(i_own, &z_own);
        let j = sampler::draw_index_from_row(rng, &row_own);
        let p_own = model.theta_pdf(f_own, theta);
        let p_other = model.theta_pdf(f_other, theta);
        let mut z_other = model.jump(theta, f_other);
        for (k, hk) in h.iter().enumerate() {
            z_other[k] += hk;
        }
        let row_other = model.switch_row(i_other, &z_other);
        let alpha =
            (p_other / p_own).min(1.0) * (row_other[j - 1] / row_own[j - 1]).min(1.0);
        if rng.gen::<f64>() >= alpha {
            return Ok(HybridState::new(z_own, j));
        }
    }
    Err(Error::RejectionStall(RESIDUAL_CAP))
}

/// Where coupled moves contract: pairs with equal flow index together with
/// pairs whose Lyapunov sum is below 4 b / (1 - a) for drift coefficients
/// (a, b).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CouplingSet {
    pub a: f64,
    pub b: f64,
}

impl CouplingSet {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && a < 1.0 && b > 0.0 && b.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "coupling set needs drift coefficients 0 < a < 1 and b > 0, got a = {a}, b = {b}"
            )));
        }
        Ok(CouplingSet { a, b })
    }

    /// Bound 4 b / (1 - a) on the Lyapunov sum.
    pub fn radius(&self) -> f64 {
        4.0 * self.b / (1.0 - self.a)
    }

    pub fn contains(&self, model: &ModelSpec, x1: &HybridState, x2: &HybridState) -> bool {
        x1.i == x2.i || self.core(model, x1, x2)
    }

    /// The small-Lyapunov part of the set. It is contained in the set and is
    /// the event the hitting time waits for.
    pub fn core(&self, model: &ModelSpec, x1: &HybridState, x2: &HybridState) -> bool {
        pair_v_sum(model, x1, x2) < self.radius()
    }
}

/// Sum of the drift function over the pair.
pub fn pair_v_sum(model: &ModelSpec, x1: &HybridState, x2: &HybridState) -> f64 {
    lyapunov(x1, &model.ybar) + lyapunov(x2, &model.ybar)
}

/// One entry of a coupled trajectory.
#[derive(Debug, Clone)]
pub struct CoupledRecord {
    pub x1: HybridState,
    pub x2: HybridState,
    pub dtau: f64,
    pub zeta: bool,
    /// Hybrid distance between the components.
    pub dist: f64,
    /// Pair lies in the coupling set.
    pub in_set: bool,
    /// Lyapunov sum is below the set radius, the stronger event tracked by
    /// the hitting time.
    pub in_core: bool,
}

#[derive(Debug, Clone)]
pub struct CoupledPath {
    records: Vec<CoupledRecord>,
}

impl CoupledPath {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, n: usize) -> &CoupledRecord {
        &self.records[n]
    }

    pub fn records(&self) -> &[CoupledRecord] {
        &self.records
    }

    pub fn distances(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.dist).collect()
    }

    /// First step at which the Lyapunov sum is inside the set radius; None
    /// if that never happens within the simulated horizon.
    pub fn hitting_time(&self) -> Option<usize> {
        (1..self.records.len()).find(|&n| self.records[n].in_core)
    }

    /// Index from which every later simulated move was coupled: one past the
    /// last uncoupled move, or 1 when every move was coupled. Right-censored
    /// by the horizon; a longer run can only increase it.
    pub fn coupling_time(&self) -> usize {
        (1..self.records.len())
            .rev()
            .find(|&n| !self.records[n].zeta)
            .map_or(1, |n| n + 1)
    }

    /// Share of coupled moves among all simulated moves.
    pub fn zeta_frequency(&self) -> f64 {
        let n = self.records.len().saturating_sub(1);
        if n == 0 {
            return f64::NAN;
        }
        self.records[1..].iter().filter(|r| r.zeta).count() as f64 / n as f64
    }
}

fn make_record(model: &ModelSpec, set: &CouplingSet, s: &CoupledState) -> CoupledRecord {
    CoupledRecord {
        dist: s.dist(model.c),
        in_set: set.contains(model, &s.x1, &s.x2),
        in_core: set.core(model, &s.x1, &s.x2),
        x1: s.x1.clone(),
        x2: s.x2.clone(),
        dtau: s.dtau,
        zeta: s.zeta,
    }
}

/// Simulate n coupled moves; the first record carries the start pair with
/// inter-jump time 0.
pub fn simulate_coupled<R: Rng + ?Sized>(
    model: &ModelSpec,
    x1: &HybridState,
    x2: &HybridState,
    n: usize,
    set: &CouplingSet,
    rng: &mut R,
) -> Result<CoupledPath> {
    sim::validate_start(model, x1)?;
    sim::validate_start(model, x2)?;
    let mut records = Vec::with_capacity(n + 1);
    let mut s = CoupledState::start(x1.clone(), x2.clone());
    records.push(make_record(model, set, &s));
    for _ in 0..n {
        s = coupled_step(model, &s, rng)?;
        records.push(make_record(model, set, &s));
    }
    Ok(CoupledPath { records })
}

/// JSON-lines record for one coupled path entry.
#[derive(Debug, Serialize, Deserialize)]
pub struct CoupledRecordRow {
    pub n: usize,
    pub y1: Vec<f64>,
    pub i1: usize,
    pub y2: Vec<f64>,
    pub i2: usize,
    pub dtau: f64,
    pub zeta: u8,
    pub dist: f64,
}

pub fn write_coupled_jsonl<W: Write>(w: &mut W, path: &CoupledPath) -> Result<()> {
    for (n, rec) in path.records().iter().enumerate() {
        let row = CoupledRecordRow {
            n,
            y1: rec.x1.y.to_vec(),
            i1: rec.x1.i,
            y2: rec.x2.y.to_vec(),
            i2: rec.x2.i,
            dtau: rec.dtau,
            zeta: rec.zeta as u8,
            dist: rec.dist,
        };
        serde_json::to_writer(&mut *w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Contraction of the drift function under one single-chain step, fitted by
/// regressing E[V(X_1) | x] on V(x) over the probe states.
#[derive(Debug, Clone, Serialize)]
pub struct DriftCheck {
    pub slope: f64,
    /// Intercept envelope covering every probe mean at three standard errors.
    pub envelope: f64,
    pub r2: f64,
    pub probes: usize,
    pub pass: bool,
}

/// One-step contraction of the pair distance on coupled moves, and whether
/// those moves stay inside the coupling set.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionCheck {
    /// Largest ratio, over probe pairs in the set at positive distance, of
    /// the coupled-move distance mass to the start distance.
    pub beta: f64,
    pub landings_in_set: bool,
    pub probes: usize,
    /// Probe pairs at zero distance, reported but excluded from the ratio.
    pub skipped_equal: usize,
    pub pass: bool,
}

/// Chance of returning close: the smallest probability over in-set probe
/// pairs of a coupled move landing in the set within beta times the start
/// distance.
#[derive(Debug, Clone, Serialize)]
pub struct CloseReturnCheck {
    pub q_min: f64,
    pub pass: bool,
}

/// Deficit of coupled-move probability per unit distance.
#[derive(Debug, Clone, Serialize)]
pub struct CoupledMassCheck {
    pub l: f64,
    pub probes: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaPoint {
    pub gamma: f64,
    /// Mean of gamma^(-hitting time) over the collected paths.
    pub moment: f64,
    /// Largest single-path share of that mean; a dominated mean is unstable.
    pub top_share: f64,
    pub stable: bool,
}

/// Inverse-geometric moments of the hitting time of the set core, from
/// probe pairs that start inside it.
#[derive(Debug, Clone, Serialize)]
pub struct HittingCheck {
    pub grid: Vec<GammaPoint>,
    /// Smallest grid gamma below one with a stable moment; gamma = 1 holds
    /// vacuously and never counts.
    pub gamma: Option<f64>,
    pub paths: usize,
    pub unfinished_share: f64,
    pub pass: bool,
}

/// Continuity of the dual one-step operator along a shrinking probe
/// sequence, estimated with common random numbers. A Monte Carlo check on
/// one sequence, not a proof.
#[derive(Debug, Clone, Serialize)]
pub struct ContinuityCheck {
    pub gaps: Vec<f64>,
    pub tolerance: f64,
    pub heuristic: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingReport {
    pub set: CouplingSet,
    pub continuity: ContinuityCheck,
    pub drift: DriftCheck,
    pub contraction: ContractionCheck,
    pub close_return: CloseReturnCheck,
    pub coupled_mass: CoupledMassCheck,
    pub hitting: HittingCheck,
}

impl CouplingReport {
    pub fn all_pass(&self) -> bool {
        self.continuity.pass
            && self.drift.pass
            && self.contraction.pass
            && self.close_return.pass
            && self.coupled_mass.pass
            && self.hitting.pass
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Cap on the hitting time; paths that have not entered the core by then are
/// counted as unfinished and poison the moment estimates.
const HITTING_CAP: usize = 2_000;

/// Estimate every ingredient of the coupling argument over the given probe
/// pairs: the drift regression (which fixes the coupling set for all later
/// stages), one-step contraction, close-return and coupled-mass frequencies,
/// inverse-geometric hitting moments from in-core starts, and a continuity
/// probe of the dual operator. Probe pairs should cover the set, include
/// in-core starts, and may include equal pairs (skipped where a distance
/// ratio is undefined).
pub fn check_coupling_conditions<R: Rng + ?Sized>(
    model: &ModelSpec,
    probes: &[(HybridState, HybridState)],
    mc_per_probe: usize,
    rng: &mut R,
) -> Result<CouplingReport> {
    if probes.is_empty() {
        return Err(Error::InsufficientSamples("no probe pairs".into()));
    }
    if mc_per_probe < 100 {
        return Err(Error::InsufficientSamples(format!(
            "{mc_per_probe} trials per probe is too few to estimate the conditions"
        )));
    }
    for (x1, x2) in probes {
        sim::validate_start(model, x1)?;
        sim::validate_start(model, x2)?;
    }
    let drift = drift_check(model, probes, mc_per_probe, rng)?;
    // the set the remaining stages test against; when the drift fit is
    // unusable the report still completes against clamped coefficients,
    // with the failure carried by the drift stage itself
    let v_scale = probes
        .iter()
        .map(|(x1, x2)| pair_v_sum(model, x1, x2))
        .fold(0.1, f64::max);
    let set = CouplingSet::new(
        if drift.slope.is_finite() {
            drift.slope.clamp(0.05, 0.95)
        } else {
            0.5
        },
        if drift.envelope.is_finite() {
            drift.envelope.max(1e-3 * v_scale)
        } else {
            v_scale
        },
    )?;
    let trials = pair_trials(model, probes, &set, mc_per_probe, rng)?;
    let contraction = contraction_check(&trials);
    let close_return = close_return_check(&trials, contraction.beta);
    let coupled_mass = coupled_mass_check(&trials);
    let hitting = hitting_check(model, probes, &set, mc_per_probe, rng)?;
    let continuity = continuity_check(model, &probes[0].0, mc_per_probe, rng)?;
    Ok(CouplingReport {
        set,
        continuity,
        drift,
        contraction,
        close_return,
        coupled_mass,
        hitting,
    })
}

fn drift_check<R: Rng + ?Sized>(
    model: &ModelSpec,
    probes: &[(HybridState, HybridState)],
    mc: usize,
    rng: &mut R,
) -> Result<DriftCheck> {
    let mut xs: Vec<&HybridState> = Vec::new();
    for (x1, x2) in probes {
        for x in [x1, x2] {
            if !xs.iter().any(|u| equal_states(u, x)) {
                xs.push(x);
            }
        }
    }
    let mut vs = Vec::with_capacity(xs.len());
    let mut means = Vec::with_capacity(xs.len());
    let mut ses = Vec::with_capacity(xs.len());
    for &x in &xs {
        let mut acc = RunningMoments::new();
        for _ in 0..mc {
            let (next, _) = sim::step(model, x, rng)?;
            acc.push(lyapunov(&next, &model.ybar));
        }
        vs.push(lyapunov(x, &model.ybar));
        means.push(acc.mean());
        ses.push(acc.se());
    }
    let line = fit_line(&vs, &means)?;
    let envelope = vs
        .iter()
        .zip(means.iter().zip(&ses))
        .map(|(v, (m, se))| m + 3.0 * se - line.slope * v)
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = line.slope < 1.0 && envelope.is_finite() && envelope > 0.0;
    Ok(DriftCheck {
        slope: line.slope,
        envelope,
        r2: line.r2,
        probes: xs.len(),
        pass,
    })
}

struct PairTrials {
    start_dist: f64,
    start_in_set: bool,
    trials: usize,
    /// Landed distance and landed-in-set flag for each coupled trial.
    coupled: Vec<(f64, bool)>,
}

fn pair_trials<R: Rng + ?Sized>(
    model: &ModelSpec,
    probes: &[(HybridState, HybridState)],
    set: &CouplingSet,
    mc: usize,
    rng: &mut R,
) -> Result<Vec<PairTrials>> {
    let mut out = Vec::with_capacity(probes.len());
    for (x1, x2) in probes {
        let start = CoupledState::start(x1.clone(), x2.clone());
        let mut coupled = Vec::new();
        for _ in 0..mc {
            let next = coupled_step(model, &start, rng)?;
            if next.zeta {
                coupled.push((
                    next.dist(model.c),
                    set.contains(model, &next.x1, &next.x2),
                ));
            }
        }
        out.push(PairTrials {
            start_dist: start.dist(model.c),
            start_in_set: set.contains(model, x1, x2),
            trials: mc,
            coupled,
        });
    }
    Ok(out)
}

fn contraction_check(trials: &[PairTrials]) -> ContractionCheck {
    let mut beta = f64::NEG_INFINITY;
    let mut landings_in_set = true;
    let mut probes = 0;
    let mut skipped_equal = 0;
    for t in trials.iter().filter(|t| t.start_in_set) {
        landings_in_set &= t.coupled.iter().all(|&(_, in_set)| in_set);
        if t.start_dist == 0.0 {
            skipped_equal += 1;
            continue;
        }
        probes += 1;
        let mass: f64 = t.coupled.iter().map(|&(d, _)| d).sum();
        beta = beta.max(mass / (t.trials as f64) / t.start_dist);
    }
    // beta of exactly zero is legitimate: jump maps that ignore the current
    // state land both components at the same point on every coupled move
    let pass = probes > 0 && beta.is_finite() && (0.0..1.0).contains(&beta) && landings_in_set;
    ContractionCheck {
        beta,
        landings_in_set,
        probes,
        skipped_equal,
        pass,
    }
}

fn close_return_check(trials: &[PairTrials], beta: f64) -> CloseReturnCheck {
    let mut q_min = f64::INFINITY;
    for t in trials.iter().filter(|t| t.start_in_set) {
        let close = t
            .coupled
            .iter()
            .filter(|&&(d, in_set)| in_set && d <= beta * t.start_dist)
            .count();
        q_min = q_min.min(close as f64 / t.trials as f64);
    }
    CloseReturnCheck {
        q_min,
        pass: q_min.is_finite() && q_min > 0.0,
    }
}

fn coupled_mass_check(trials: &[PairTrials]) -> CoupledMassCheck {
    let mut l = 0.0f64;
    let mut probes = 0;
    let mut pass = true;
    for t in trials
        .iter()
        .filter(|t| t.start_in_set && t.start_dist > 0.0)
    {
        probes += 1;
        let deficit = 1.0 - t.coupled.len() as f64 / t.trials as f64;
        pass &= deficit < 1.0;
        l = l.max(deficit / t.start_dist);
    }
    CoupledMassCheck {
        l,
        probes,
        pass: pass && probes > 0 && l.is_finite(),
    }
}

fn hitting_check<R: Rng + ?Sized>(
    model: &ModelSpec,
    probes: &[(HybridState, HybridState)],
    set: &CouplingSet,
    mc: usize,
    rng: &mut R,
) -> Result<HittingCheck> {
    let starts: Vec<(&HybridState, &HybridState)> = probes
        .iter()
        .filter(|(x1, x2)| set.core(model, x1, x2))
        .map(|(x1, x2)| (x1, x2))
        .collect();
    let paths_per_start = (mc / 10).clamp(30, 200);
    let mut rhos: Vec<usize> = Vec::new();
    let mut unfinished = 0usize;
    for &(x1, x2) in &starts {
        for _ in 0..paths_per_start {
            let mut s = CoupledState::start(x1.clone(), x2.clone());
            let mut hit = None;
            for n in 1..=HITTING_CAP {
                s = coupled_step(model, &s, rng)?;
                if set.core(model, &s.x1, &s.x2) {
                    hit = Some(n);
                    break;
                }
            }
            match hit {
                Some(n) => rhos.push(n),
                None => unfinished += 1,
            }
        }
    }
    let total = rhos.len() + unfinished;
    let unfinished_share = if total == 0 {
        1.0
    } else {
        unfinished as f64 / total as f64
    };
    let mut grid = Vec::new();
    for &gamma in &[0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 1.0] {
        let weights: Vec<f64> = rhos.iter().map(|&r| gamma_pow_neg(gamma, r)).collect();
        let sum: f64 = weights.iter().sum();
        let moment = if rhos.is_empty() {
            f64::NAN
        } else {
            sum / rhos.len() as f64
        };
        let top = weights.iter().cloned().fold(0.0f64, f64::max);
        let top_share = if sum > 0.0 { top / sum } else { 1.0 };
        let stable =
            moment.is_finite() && unfinished == 0 && !rhos.is_empty() && top_share < 0.25;
        grid.push(GammaPoint {
            gamma,
            moment,
            top_share,
            stable,
        });
    }
    let gamma = grid
        .iter()
        .filter(|p| p.gamma < 1.0 && p.stable)
        .map(|p| p.gamma)
        .fold(f64::INFINITY, f64::min);
    let gamma = if gamma.is_finite() { Some(gamma) } else { None };
    Ok(HittingCheck {
        grid,
        gamma,
        paths: total,
        unfinished_share,
        pass: gamma.is_some(),
    })
}

fn gamma_pow_neg(gamma: f64, r: usize) -> f64 {
    gamma.powi(-(r as i32))
}

/// Common-random-number probe of the dual operator along x_k -> x*: the same
/// substream drives every estimate, so the gaps isolate the dependence on
/// the start point and must shrink with the perturbation.
fn continuity_check<R: Rng + ?Sized>(
    model: &ModelSpec,
    base: &HybridState,
    mc: usize,
    rng: &mut R,
) -> Result<ContinuityCheck> {
    let g = Observable {
        name: "cosy".into(),
        kind: ObservableKind::CosY { freq: 1.0 },
        sup_bound: 1.0,
        lip_bound: 1.0,
    };
    let room = match &model.space {
        StateSpace::Box { lo, hi } => {
            let up = hi[0] - base.y[0];
            let down = base.y[0] - lo[0];
            if up >= down {
                0.9 * up.min(0.5)
            } else {
                -0.9 * down.min(0.5)
            }
        }
        StateSpace::All { .. } => 0.5,
    };
    let root: u64 = rng.gen();
    let estimate = |x: &HybridState| -> Result<f64> {
        let mut r = SeedStream::new(root).rng(0);
        Ok(operators::dual_p(model, &g, x, mc, &mut r)?.mean)
    };
    let base_mean = estimate(base)?;
    let mut gaps = Vec::new();
    for k in 0..6 {
        let mut y = base.y.clone();
        y[0] += room * 0.5f64.powi(k);
        let xk = HybridState::new(y, base.i);
        gaps.push((estimate(&xk)? - base_mean).abs());
    }
    let tolerance = 0.2 * gaps[0];
    let pass = *gaps.last().unwrap() <= tolerance + 1e-12;
    Ok(ContinuityCheck {
        gaps,
        tolerance,
        heuristic: true,
        pass,
    })
}

/// Decay of E|Z^1_n - Z^2_n| between the components' martingale increments
/// along coupled paths, with a geometric fit and the partial-sum tail share.
#[derive(Debug, Clone, Serialize)]
pub struct IncrementGapReport {
    /// Mean absolute gap at each step, n = 1..=n_max.
    pub gap: Vec<f64>,
    pub rate: f64,
    pub r2: f64,
    pub window: usize,
    /// Sum of the mean gaps over the whole range.
    pub total: f64,
    /// Share of the total carried by the last tenth of the range.
    pub tail_share: f64,
}

pub fn coupled_increment_gap<R: Rng + ?Sized>(
    model: &ModelSpec,
    x1: &HybridState,
    x2: &HybridState,
    g: &Observable,
    center: f64,
    n_max: usize,
    n_paths: usize,
    rng: &mut R,
) -> Result<IncrementGapReport> {
    if n_max < 5 || n_paths == 0 {
        return Err(Error::InsufficientSamples(format!(
            "{n_max} steps over {n_paths} paths cannot resolve the gap decay"
        )));
    }
    sim::validate_start(model, x1)?;
    sim::validate_start(model, x2)?;
    let quad_tol = 1e-9;
    let mut gap = vec![0.0; n_max];
    for _ in 0..n_paths {
        let mut s = CoupledState::start(x1.clone(), x2.clone());
        for slot in gap.iter_mut() {
            let prev1 = s.x1.clone();
            let prev2 = s.x2.clone();
            s = coupled_step(model, &s, rng)?;
            let z1 = martingale_increment(model, g, center, &prev1, s.dtau, quad_tol)?;
            let z2 = martingale_increment(model, g, center, &prev2, s.dtau, quad_tol)?;
            *slot += (z1 - z2).abs();
        }
    }
    for v in gap.iter_mut() {
        *v /= n_paths as f64;
    }
    let top = gap.iter().cloned().fold(0.0f64, f64::max);
    // exclude the exactly coalesced tail and rounding dust from the log fit
    let fit = match fit_geometric(&gap, top * 1e-12) {
        Ok(f) => f,
        Err(Error::InsufficientSamples(_)) => GeometricFit {
            rate: 1.0,
            amplitude: 0.0,
            r2: 0.0,
            window: 0,
        },
        Err(e) => return Err(e),
    };
    let total: f64 = gap.iter().sum();
    let tail: f64 = gap[n_max - n_max / 10..].iter().sum();
    Ok(IncrementGapReport {
        gap,
        rate: fit.rate,
        r2: fit.r2,
        window: fit.window,
        total,
        tail_share: if total > 0.0 { tail / total } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::load_gallery;
    use crate::observable::standard_observable;
    use crate::stats::ks_two_sample;

    #[test]
    fn equal_components_absorb_and_match_the_single_chain() {
        let m = load_gallery("relaxation").unwrap().spec;
        let set = CouplingSet::new(0.5, 0.5).unwrap();
        let x0 = HybridState::from_slice(&[0.7], 1);
        let mut rng = SeedStream::new(21).rng(0);
        let path = simulate_coupled(&m, &x0, &x0, 200, &set, &mut rng).unwrap();
        for rec in path.records() {
            assert!(rec.zeta);
            assert_eq!(rec.dist, 0.0);
            assert_eq!(rec.x1.i, rec.x2.i);
            assert_eq!(rec.x1.y, rec.x2.y);
        }
        assert_eq!(path.coupling_time(), 1);
        // same seed, same stream: the pair follows the single chain bit for bit
        let mut rng2 = SeedStream::new(21).rng(0);
        let single = sim::simulate_embedded(&m, &x0, 200, &mut rng2).unwrap();
        for n in 0..=200 {
            assert_eq!(path.record(n).x1.y.as_slice(), single.y(n));
            assert_eq!(path.record(n).x1.i, single.flow_index(n));
        }
    }

    #[test]
    fn shared_randomness_contracts_at_the_exact_rate() {
        // uniform jump density and a single switch row make every stage
        // ratio one, so all moves are coupled and the distance recursion is
        // dist' = 0.5 e^{-dt} dist with mean factor 1/4 at unit rates
        let m = load_gallery("relaxation").unwrap().spec;
        let set = CouplingSet::new(0.5, 0.5).unwrap();
        let a = HybridState::from_slice(&[0.2], 1);
        let b = HybridState::from_slice(&[3.4], 1);
        let d0 = 3.2;
        let n_steps = 10;
        let n_paths = 4000;
        let mut rng = SeedStream::new(22).rng(0);
        let mut acc: Vec<RunningMoments> = (0..=n_steps).map(|_| RunningMoments::new()).collect();
        for _ in 0..n_paths {
            let path = simulate_coupled(&m, &a, &b, n_steps, &set, &mut rng).unwrap();
            for n in 0..=n_steps {
                let rec = path.record(n);
                assert!(rec.zeta || n == 0);
                acc[n].push(rec.dist);
                if n > 0 {
                    let prev = path.record(n - 1);
                    let predicted = 0.5 * (-rec.dtau).exp() * prev.dist;
                    assert!(
                        (rec.dist - predicted).abs() <= 1e-13 * (1.0 + prev.dist),
                        "recursion broke at step {n}: {} vs {predicted}",
                        rec.dist
                    );
                }
            }
        }
        for (n, a_n) in acc.iter().enumerate().skip(1).take(6) {
            let expected = d0 * 0.25f64.powi(n as i32);
            assert!(
                (a_n.mean() - expected).abs() < 5.0 * a_n.se(),
                "step {n}: mean {} expected {expected} se {}",
                a_n.mean(),
                a_n.se()
            );
        }
    }

    #[test]
    fn each_component_keeps_the_single_chain_marginal() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let x1 = HybridState::from_slice(&[0.3], 1);
        let x2 = HybridState::from_slice(&[2.0], 2);
        let n_rep = 8000;
        let horizon = 3;
        let mut coupled_y1 = Vec::with_capacity(n_rep);
        let mut coupled_y2 = Vec::with_capacity(n_rep);
        let mut coupled_y1_w1 = Vec::with_capacity(n_rep);
        let mut idx_coupled = 0usize;
        let mut rng = SeedStream::new(23).rng(0);
        for _ in 0..n_rep {
            let mut s = CoupledState::start(x1.clone(), x2.clone());
            for n in 0..horizon {
                s = coupled_step(&m, &s, &mut rng).unwrap();
                if n == 0 {
                    coupled_y1_w1.push(s.x1.y[0]);
                }
            }
            coupled_y1.push(s.x1.y[0]);
            coupled_y2.push(s.x2.y[0]);
            idx_coupled += (s.x1.i == 1) as usize;
        }
        let mut single_y1 = Vec::with_capacity(n_rep);
        let mut single_y2 = Vec::with_capacity(n_rep);
        let mut single_y1_w1 = Vec::with_capacity(n_rep);
        let mut idx_single = 0usize;
        let mut rng1 = SeedStream::new(23).rng(1);
        let mut rng2 = SeedStream::new(23).rng(2);
        for _ in 0..n_rep {
            let p1 = sim::simulate_embedded(&m, &x1, horizon, &mut rng1).unwrap();
            let p2 = sim::simulate_embedded(&m, &x2, horizon, &mut rng2).unwrap();
            single_y1.push(p1.y(horizon)[0]);
            single_y2.push(p2.y(horizon)[0]);
            single_y1_w1.push(p1.y(1)[0]);
            idx_single += (p1.flow_index(horizon) == 1) as usize;
        }
        for (a, b, label) in [
            (&coupled_y1_w1, &single_y1_w1, "component 1, one step"),
            (&coupled_y1, &single_y1, "component 1, three steps"),
            (&coupled_y2, &single_y2, "component 2, three steps"),
        ] {
            let (d, p) = ks_two_sample(a, b).unwrap();
            assert!(p > 1e-3, "{label}: KS distance {d}, p = {p}");
        }
        // flow-index marginal: binomial comparison at four sigma
        let (f1, f2) = (
            idx_coupled as f64 / n_rep as f64,
            idx_single as f64 / n_rep as f64,
        );
        let se = (2.0 * 0.25 / n_rep as f64).sqrt();
        assert!((f1 - f2).abs() < 4.0 * se, "index freq {f1} vs {f2}");
    }

    #[test]
    fn coupled_move_frequency_decreases_with_start_distance() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let deltas = [0.05, 0.1, 0.2, 0.4, 0.8, 1.6];
        let n_rep = 4000;
        let mut freqs = Vec::new();
        for &delta in &deltas {
            // matched streams: each rung sees the same randomness, so the
            // frequencies differ only through the start distance
            let mut rng = SeedStream::new(4242).rng(7);
            let a = HybridState::from_slice(&[1.0], 1);
            let b = HybridState::from_slice(&[1.0 + delta], 1);
            let start = CoupledState::start(a, b);
            let mut coupled = 0usize;
            for _ in 0..n_rep {
                coupled += coupled_step(&m, &start, &mut rng).unwrap().zeta as usize;
            }
            freqs.push(coupled as f64 / n_rep as f64);
        }
        let xs: Vec<f64> = deltas.to_vec();
        let line = fit_line(&xs, &freqs).unwrap();
        assert!(
            line.slope < 0.0,
            "frequencies {freqs:?} do not fall with distance"
        );
        assert!(freqs[0] > freqs[deltas.len() - 1] + 0.01, "{freqs:?}");
        assert!(freqs.iter().all(|&f| f > 0.5), "{freqs:?}");
    }

    #[test]
    fn pair_distance_decays_geometrically_to_coalescence() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let set = CouplingSet::new(0.5, 0.5).unwrap();
        let a = HybridState::from_slice(&[0.3], 1);
        let b = HybridState::from_slice(&[2.6], 2);
        let n_steps = 40;
        let n_paths = 1200;
        let mut rng = SeedStream::new(25).rng(0);
        let mut mean = vec![0.0f64; n_steps + 1];
        let mut coalesced = 0usize;
        for _ in 0..n_paths {
            let path = simulate_coupled(&m, &a, &b, n_steps, &set, &mut rng).unwrap();
            for (n, slot) in mean.iter_mut().enumerate() {
                *slot += path.record(n).dist;
            }
            coalesced += (path.record(n_steps).dist == 0.0) as usize;
        }
        for v in mean.iter_mut() {
            *v /= n_paths as f64;
        }
        let top = mean.iter().cloned().fold(0.0f64, f64::max);
        let fit = fit_geometric(&mean, top * 1e-9).unwrap();
        assert!(fit.window >= 8, "window {}", fit.window);
        assert!(
            fit.rate > 0.15 && fit.rate < 0.7,
            "rate {} r2 {}",
            fit.rate,
            fit.r2
        );
        assert!(fit.r2 > 0.9, "r2 {}", fit.r2);
        // most paths have coalesced exactly by the horizon
        assert!(
            coalesced as f64 > 0.9 * n_paths as f64,
            "{coalesced} of {n_paths}"
        );
    }

    #[test]
    fn hitting_times_are_finite_on_nearly_every_path() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let set = CouplingSet::new(0.5, 0.5).unwrap();
        let a = HybridState::from_slice(&[0.2], 1);
        let b = HybridState::from_slice(&[3.0], 2);
        let mut rng = SeedStream::new(26).rng(0);
        let n_paths = 500;
        let mut unfinished = 0usize;
        let mut hits: Vec<usize> = Vec::new();
        for _ in 0..n_paths {
            let path = simulate_coupled(&m, &a, &b, 1000, &set, &mut rng).unwrap();
            match path.hitting_time() {
                Some(n) => hits.push(n),
                None => unfinished += 1,
            }
        }
        assert!(unfinished as f64 / (n_paths as f64) < 0.01, "{unfinished}");
        hits.sort_unstable();
        let median = hits[hits.len() / 2];
        assert!(median <= 10, "median hitting time {median}");
    }

    #[test]
    fn condition_report_passes_on_the_switching_model() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let mut probes: Vec<(HybridState, HybridState)> = Vec::new();
        for &(y1, i1, y2, i2) in &[
            (0.6, 1, 0.6, 1),
            (0.4, 1, 0.9, 1),
            (0.2, 1, 1.4, 2),
            (1.0, 2, 2.5, 2),
            (0.6, 2, 1.1, 1),
            (2.5, 1, 4.0, 2),
            (0.9, 1, 1.0, 2),
        ] {
            probes.push((
                HybridState::from_slice(&[y1], i1),
                HybridState::from_slice(&[y2], i2),
            ));
        }
        let mut rng = SeedStream::new(27).rng(0);
        let report = check_coupling_conditions(&m, &probes, 1500, &mut rng).unwrap();
        assert!(report.drift.pass, "{}", report.to_json());
        assert!(report.drift.slope < 1.0 && report.drift.slope > 0.0);
        assert!(report.contraction.pass, "{}", report.to_json());
        assert_eq!(report.contraction.skipped_equal, 1);
        assert!(report.close_return.pass, "{}", report.to_json());
        assert!(report.coupled_mass.pass, "{}", report.to_json());
        assert!(report.hitting.pass, "{}", report.to_json());
        assert!(report.continuity.pass && report.continuity.heuristic);
        assert!(report.all_pass());
        let json = report.to_json();
        for key in [
            "drift",
            "contraction",
            "close_return",
            "coupled_mass",
            "hitting",
            "continuity",
            "set",
        ] {
            assert!(json.contains(key), "missing {key} in {json}");
        }
    }

    #[test]
    fn identical_starts_give_identically_zero_increment_gaps() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let g = standard_observable("y", &m).unwrap();
        let x = HybridState::from_slice(&[0.7], 1);
        let mut rng = SeedStream::new(28).rng(0);
        let rep = coupled_increment_gap(&m, &x, &x, &g, 0.3, 12, 50, &mut rng).unwrap();
        assert!(rep.gap.iter().all(|&v| v == 0.0), "{:?}", rep.gap);
        assert_eq!(rep.total, 0.0);
        assert_eq!(rep.window, 0);
    }

    #[test]
    fn increment_gaps_decay_and_their_partial_sums_stabilize() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let g = standard_observable("y", &m).unwrap();
        let a = HybridState::from_slice(&[0.3], 1);
        let b = HybridState::from_slice(&[2.2], 2);
        let mut rng = SeedStream::new(29).rng(0);
        let rep = coupled_increment_gap(&m, &a, &b, &g, 0.5, 30, 2500, &mut rng).unwrap();
        assert!(rep.rate < 0.8, "rate {}", rep.rate);
        assert!(rep.r2 > 0.85, "r2 {}", rep.r2);
        assert!(rep.window >= 8, "window {}", rep.window);
        assert!(rep.tail_share < 0.02, "tail share {}", rep.tail_share);
        let cap = 4.0 * g.sup_bound / m.lambda;
        assert!(rep.gap[0] <= cap, "first gap {} above {cap}", rep.gap[0]);
        let last = *rep.gap.last().unwrap();
        let top = rep.gap.iter().cloned().fold(0.0f64, f64::max);
        assert!(last < 0.01 * top, "no decay: last {last} vs top {top}");
    }

    #[test]
    fn coupled_paths_export_as_json_lines() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let set = CouplingSet::new(0.5, 0.5).unwrap();
        let a = HybridState::from_slice(&[0.3], 1);
        let b = HybridState::from_slice(&[2.6], 2);
        let mut rng = SeedStream::new(30).rng(0);
        let path = simulate_coupled(&m, &a, &b, 25, &set, &mut rng).unwrap();
        let mut buf = Vec::new();
        write_coupled_jsonl(&mut buf, &path).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<CoupledRecordRow> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(rows.len(), 26);
        for (k, row) in rows.iter().enumerate() {
            assert_eq!(row.n, k);
            assert!(row.zeta <= 1);
            assert!(row.dist >= 0.0);
            assert_eq!(row.y1.len(), 1);
            let rec = path.record(k);
            assert_eq!(row.y1[0], rec.x1.y[0]);
            assert_eq!(row.y2[0], rec.x2.y[0]);
            assert_eq!(row.i1, rec.x1.i);
            assert_eq!(row.i2, rec.x2.i);
        }
    }

    #[test]
    fn bad_probe_sets_are_rejected() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let mut rng = SeedStream::new(31).rng(0);
        assert!(check_coupling_conditions(&m, &[], 1000, &mut rng).is_err());
        let pair = (
            HybridState::from_slice(&[0.5], 1),
            HybridState::from_slice(&[1.0], 2),
        );
        assert!(check_coupling_conditions(&m, &[pair.clone()], 10, &mut rng).is_err());
        let out = (
            HybridState::from_slice(&[0.5], 1),
            HybridState::from_slice(&[1.0], 9),
        );
        assert!(check_coupling_conditions(&m, &[out], 1000, &mut rng).is_err());
        assert!(CouplingSet::new(1.2, 0.5).is_err());
        assert!(CouplingSet::new(0.5, -1.0).is_err());
    }
}
