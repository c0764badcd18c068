//! Event-driven simulation of the embedded chain and the interpolated
//! continuous-time process.
//!
//! One chain step: draw the inter-jump time, flow the current state, draw
//! noise and the jump parameter at the flowed state, apply the jump map, add
//! noise, then draw the next flow index at the post-noise state. Between
//! jumps the process is deterministic, so time integrals are computed per
//! segment (closed form for affine observables, quadrature otherwise) and no
//! discretization bias enters any downstream statistic.

use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::observable::Observable;
use crate::quad;
use crate::sampler;
use crate::space::{svec, HybridState};
use crate::stats::CompensatedSum;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Columnar record of (X_0..X_n, dtau_0..dtau_n) with cached jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPath {
    dim: usize,
    ys: Vec<f64>,
    idx: Vec<u32>,
    interjump: Vec<f64>,
    jump_times: Vec<f64>,
}

impl EmbeddedPath {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ys: Vec::new(),
            idx: Vec::new(),
            interjump: Vec::new(),
            jump_times: Vec::new(),
        }
    }

    pub fn from_states(dim: usize, entries: &[(HybridState, f64)]) -> Self {
        let mut p = Self::new(dim);
        for (x, dt) in entries {
            p.push(x, *dt);
        }
        p
    }

    pub fn push(&mut self, x: &HybridState, dtau: f64) {
        debug_assert_eq!(x.y.len(), self.dim);
        self.ys.extend_from_slice(&x.y);
        self.idx.push(x.i as u32);
        // compensated cumulative time so long runs do not drift
        let tau = if self.jump_times.is_empty() {
            debug_assert_eq!(dtau, 0.0);
            0.0
        } else {
            let mut acc = CompensatedSum::new();
            acc.add(*self.jump_times.last().unwrap());
            acc.add(dtau);
            acc.value()
        };
        self.interjump.push(dtau);
        self.jump_times.push(tau);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of stored states, n + 1.
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.ys[k * self.dim..(k + 1) * self.dim]
    }

    pub fn flow_index(&self, k: usize) -> usize {
        self.idx[k] as usize
    }

    pub fn state(&self, k: usize) -> HybridState {
        HybridState::new(svec(self.y(k)), self.flow_index(k))
    }

    pub fn dtau(&self, k: usize) -> f64 {
        self.interjump[k]
    }

    pub fn tau(&self, k: usize) -> f64 {
        self.jump_times[k]
    }

    pub fn last_tau(&self) -> f64 {
        *self.jump_times.last().expect("nonempty path")
    }

    pub fn interjump_times(&self) -> &[f64] {
        &self.interjump
    }
}

/// One transition of the embedded chain.
pub fn step<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &HybridState,
    rng: &mut R,
) -> Result<(HybridState, f64)> {
    let dt = sampler::draw_exp(rng, model.lambda);
    let next = step_with_interjump(model, x, dt, rng)?;
    Ok((next, dt))
}

/// The state move given the inter-jump time; used directly by the coupled
/// chain, which shares the clock across components.
pub fn step_with_interjump<R: Rng + ?Sized>(
    model: &ModelSpec,
    x: &HybridState,
    dt: f64,
    rng: &mut R,
) -> Result<HybridState> {
    let flowed = model.eval_flow(x.i, dt, &x.y);
    let h = model.draw_noise(rng)?;
    debug_assert!(h.iter().map(|v| v * v).sum::<f64>().sqrt() <= model.eps() + 1e-12);
    let theta = model.draw_theta(rng, &flowed);
    let mut landed = model.jump(theta, &flowed);
    for (k, hk) in h.iter().enumerate() {
        landed[k] += hk;
    }
    if !model.contains(&landed) {
        return Err(Error::StateEscapedY(format!(
            "jump landed at {:?} (model {})",
            landed.as_slice(),
            model.name
        )));
    }
    let row = model.switch_row(x.i, &landed);
    let j = sampler::draw_index_from_row(rng, &row);
    Ok(HybridState::new(landed, j))
}

/// Integral of g along the flow started at x over [0, dt]; closed form for
/// affine g, adaptive quadrature otherwise.
pub fn flow_integral(
    model: &ModelSpec,
    g: &Observable,
    x: &HybridState,
    dt: f64,
    tol: f64,
) -> Result<f64> {
    if !(dt >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "segment length {dt} is not a nonnegative number"
        )));
    }
    let flow = model.flow(x.i);
    if let Some((a, b)) = g.affine_parts() {
        return Ok(flow.affine_segment_integral(a, b, &x.y, 0.0, dt));
    }
    quad::integrate(
        |s| g.eval(&HybridState::new(flow.eval(s, &x.y), x.i)),
        0.0,
        dt,
        tol,
    )
}

pub(crate) fn validate_start(model: &ModelSpec, x0: &HybridState) -> Result<()> {
    if x0.i == 0 || x0.i > model.num_flows {
        return Err(Error::InvalidConfig(format!(
            "start flow index {} outside 1..={}",
            x0.i, model.num_flows
        )));
    }
    if x0.y.len() != model.dim || !model.contains(&x0.y) {
        return Err(Error::InvalidConfig(
            "start state lies outside the state space".into(),
        ));
    }
    Ok(())
}

/// Simulate n steps of the embedded chain; the first record carries the
/// start state with inter-jump time 0.
pub fn simulate_embedded<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: &HybridState,
    n: usize,
    rng: &mut R,
) -> Result<EmbeddedPath> {
    validate_start(model, x0)?;
    let mut path = EmbeddedPath::new(model.dim);
    path.push(x0, 0.0);
    let mut x = x0.clone();
    for _ in 0..n {
        let (next, dt) = step(model, &x, rng)?;
        path.push(&next, dt);
        x = next;
    }
    Ok(path)
}

/// Simulate until the cumulative jump time strictly exceeds `horizon`, so
/// every time-indexed query in [0, horizon] is answerable. Initially sized
/// at 1.2*lambda*horizon + 10*sqrt(lambda*horizon) jumps, then extended
/// stepwise in the (rare) case the clock still falls short.
pub fn simulate_to_horizon<R: Rng + ?Sized>(
    model: &ModelSpec,
    x0: &HybridState,
    horizon: f64,
    rng: &mut R,
) -> Result<EmbeddedPath> {
    let lt = model.lambda * horizon;
    let n_est = (1.2 * lt + 10.0 * lt.sqrt()).ceil() as usize;
    let mut path = simulate_embedded(model, x0, n_est.max(1), rng)?;
    let mut x = path.state(path.len() - 1);
    while path.last_tau() <= horizon {
        let (next, dt) = step(model, &x, rng)?;
        path.push(&next, dt);
        x = next;
    }
    Ok(path)
}

/// Read-only view pairing a path with its model; evaluates the interpolated
/// process X(t) between the stored jump states.
#[derive(Debug, Clone, Copy)]
pub struct ContinuousPath<'a> {
    pub model: &'a ModelSpec,
    pub path: &'a EmbeddedPath,
}

impl<'a> ContinuousPath<'a> {
    pub fn new(model: &'a ModelSpec, path: &'a EmbeddedPath) -> Self {
        Self { model, path }
    }

    pub fn horizon(&self) -> f64 {
        self.path.last_tau()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t < 0.0 || t >= self.horizon() {
            return Err(Error::BeyondHorizon {
                t,
                horizon: self.horizon(),
            });
        }
        Ok(())
    }

    /// Count of jump times at or before t.
    pub fn renewal_count(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        let first_after = self.path.jump_times.partition_point(|&tau| tau <= t);
        Ok(first_after - 1)
    }

    /// X(t): flow the last jump state forward by the elapsed segment time.
    pub fn eval(&self, t: f64) -> Result<HybridState> {
        let n = self.renewal_count(t)?;
        let i = self.path.flow_index(n);
        if t == self.path.tau(n) {
            // stored nodes are exact, no flow evaluation
            return Ok(self.path.state(n));
        }
        let y = self
            .model
            .eval_flow(i, t - self.path.tau(n), &svec(self.path.y(n)));
        Ok(HybridState::new(y, i))
    }

    /// Integral of g(X(s)) over [t0, t1], exact per segment for affine g,
    /// adaptive quadrature otherwise.
    pub fn integral(&self, g: &Observable, t0: f64, t1: f64, tol: f64) -> Result<f64> {
        if t1 < t0 {
            return Err(Error::InvalidConfig(format!(
                "integral bounds out of order: [{t0}, {t1}]"
            )));
        }
        self.check_time(t0)?;
        if t1 > 0.0 {
            self.check_time(t1 - f64::EPSILON * t1.abs())?;
        }
        let mut acc = CompensatedSum::new();
        let mut k = self.renewal_count(t0)?;
        let mut seg_start = t0;
        while seg_start < t1 {
            let seg_end = if k + 1 < self.path.len() {
                self.path.tau(k + 1).min(t1)
            } else {
                t1
            };
            let y = svec(self.path.y(k));
            let i = self.path.flow_index(k);
            let flow = self.model.flow(i);
            let (s0, s1) = (seg_start - self.path.tau(k), seg_end - self.path.tau(k));
            let piece = if let Some((a, b)) = g.affine_parts() {
                flow.affine_segment_integral(a, b, &y, s0, s1)
            } else {
                quad::integrate(
                    |s| g.eval(&HybridState::new(flow.eval(s, &y), i)),
                    s0,
                    s1,
                    tol,
                )?
            };
            acc.add(piece);
            seg_start = seg_end;
            k += 1;
        }
        Ok(acc.value())
    }
}

/// JSON-lines record for one path entry.
#[derive(Debug, Serialize, Deserialize)]
pub struct PathRecord {
    pub n: usize,
    pub tau: f64,
    pub y: Vec<f64>,
    pub i: usize,
}

pub fn write_path_jsonl<W: Write>(w: &mut W, path: &EmbeddedPath) -> Result<()> {
    for k in 0..path.len() {
        let rec = PathRecord {
            n: k,
            tau: path.tau(k),
            y: path.y(k).to_vec(),
            i: path.flow_index(k),
        };
        serde_json::to_writer(&mut *w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_path_jsonl<R: BufRead>(r: R, dim: usize) -> Result<EmbeddedPath> {
    let mut path = EmbeddedPath::new(dim);
    let mut prev_tau = 0.0;
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PathRecord = serde_json::from_str(&line)?;
        let x = HybridState::new(svec(&rec.y), rec.i);
        let dtau = if path.is_empty() { 0.0 } else { rec.tau - prev_tau };
        path.push(&x, dtau);
        prev_tau = rec.tau;
    }
    Ok(path)
}

const COLUMNAR_MAGIC: &[u8; 8] = b"JFPATH01";

/// Compact binary form: magic, dim, count, then the flow-index, inter-jump,
/// and state columns in order, all little-endian.
pub fn write_path_columnar<W: Write>(w: &mut W, path: &EmbeddedPath) -> Result<()> {
    w.write_all(COLUMNAR_MAGIC)?;
    w.write_all(&(path.dim as u32).to_le_bytes())?;
    w.write_all(&(path.len() as u64).to_le_bytes())?;
    for v in &path.idx {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &path.interjump {
        w.write_all(&v.to_le_bytes())?;
    }
    for v in &path.ys {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_path_columnar<R: std::io::Read>(r: &mut R) -> Result<EmbeddedPath> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != COLUMNAR_MAGIC {
        return Err(Error::InvalidConfig("not a columnar path file".into()));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    let mut idx = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b4)?;
        idx.push(u32::from_le_bytes(b4));
    }
    let mut interjump = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut b8)?;
        interjump.push(f64::from_le_bytes(b8));
    }
    let mut ys = Vec::with_capacity(count * dim);
    for _ in 0..count * dim {
        r.read_exact(&mut b8)?;
        ys.push(f64::from_le_bytes(b8));
    }
    let mut path = EmbeddedPath::new(dim);
    for k in 0..count {
        let x = HybridState::new(svec(&ys[k * dim..(k + 1) * dim]), idx[k] as usize);
        path.push(&x, interjump[k]);
    }
    Ok(path)
}
