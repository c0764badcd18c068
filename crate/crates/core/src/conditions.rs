//! Numeric spot checks of the model's standing regularity bounds.
//!
//! The declared constants in [`crate::model::Constants`] assert inequalities
//! quantified over all states, times and jump parameters. A finite run can
//! only sample them, so each check evaluates its inequality on a probe set
//! and keeps the worst margin (bound side minus tested side) together with
//! the probe attaining it. A positive worst margin means every probe
//! satisfied the bound with room to spare; a negative one is a concrete
//! counterexample, up to quadrature error. Probes come from a quasi-random
//! sweep of the bounding box, so a fixed count gives a fixed verdict.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{JumpDensity, ModelSpec, ThetaSpace};
use crate::quad;
use crate::space::{norm_diff, StateVec};

/// Finiteness proxy for the tail moment integral: the check fails if the
/// integral estimate exceeds this cap.
pub const DEFAULT_MOMENT_CAP: f64 = 1e6;

/// Relative tolerance for the single-level quadratures inside the checks.
const CHECK_QUAD_TOL: f64 = 1e-10;

/// Absolute tolerance for the density-difference integral, whose values can
/// be cancellation noise when the two states give nearly equal densities.
const DENSITY_GAP_TOL: f64 = 1e-12;

/// The moment check nests one quadrature inside another. The inner one must
/// run far tighter than the outer, or the outer sees the inner's truncation
/// jitter as a rough integrand and subdivides without bound.
const MOMENT_INNER_TOL: f64 = 1e-10;
const MOMENT_OUTER_TOL: f64 = 1e-5;

/// Points scanned for the sup of the moment integral when the density is
/// state dependent. Each evaluation is a full double quadrature, so the scan
/// is thinned; the leading low-discrepancy points already sweep the box.
const MOMENT_SUP_POINTS: usize = 48;

/// Grid resolution used to locate the jump-overlap parameter region.
const OVERLAP_GRID: usize = 256;

const HALTON_PRIMES: [u64; 36] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
    97, 101, 103, 107, 109, 113, 127, 131, 137, 139, 149, 151,
];

/// One probe: a pair of points in Y and a time offset for the flow bound.
#[derive(Debug, Clone)]
pub struct ProbePair {
    pub y1: StateVec,
    pub y2: StateVec,
    pub t: f64,
}

/// Probe attaining the worst margin of a check, with both sides of the
/// inequality as evaluated there.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub i2: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    /// Which sub-inequality produced the margin, for two-part checks.
    pub part: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionCheck {
    pub pass: bool,
    /// Worst margin over the probe set. For a pair with zero distance the
    /// bound degenerates to 0 <= 0, and the margin is reported as the bound's
    /// leading constant instead.
    pub margin: f64,
    pub witness: Witness,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub model: String,
    pub probes: usize,
    pub tol: f64,
    /// Weight mass dropped by truncating the time integral of the moment
    /// check at 40 / lambda.
    pub tail_bound: f64,
    /// Finite (2+r)-moment of the jump image of the flow from the reference
    /// point, integrated over the jump clock.
    pub moment_integrability: ConditionCheck,
    /// Distance growth of two flows started apart is at most exponential in
    /// time plus a linear term when the flow indices differ.
    pub flow_lipschitz: ConditionCheck,
    /// Density-weighted (2+r)-moment of the gap between jump images
    /// contracts by the declared factor.
    pub jump_contraction: ConditionCheck,
    /// Switching rows (total variation) and jump density (L1) are Lipschitz
    /// in the state.
    pub kernel_lipschitz: ConditionCheck,
    /// Switching rows overlap by at least the declared mass, and so do the
    /// jump densities over the parameter region where the jump images stay
    /// contracted.
    pub kernel_overlap: ConditionCheck,
}

impl ConditionReport {
    pub fn entries(&self) -> [(&'static str, &ConditionCheck); 5] {
        [
            ("moment_integrability", &self.moment_integrability),
            ("flow_lipschitz", &self.flow_lipschitz),
            ("jump_contraction", &self.jump_contraction),
            ("kernel_lipschitz", &self.kernel_lipschitz),
            ("kernel_overlap", &self.kernel_overlap),
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.entries().iter().all(|(_, c)| c.pass)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Van der Corput radical inverse; never returns 0 for k >= 1.
fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut x = 0.0;
    let mut f = inv;
    while k > 0 {
        x += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    x
}

/// Deterministic low-discrepancy probe pairs over the bounding box of Y,
/// each carrying a time offset in (0, 40/lambda].
pub fn halton_probes(model: &ModelSpec, n: usize) -> Result<Vec<ProbePair>> {
    let (lo, hi) = model.space.probe_box().ok_or_else(|| {
        Error::InvalidConfig("probe generation needs a box state space".into())
    })?;
    let dim = model.dim;
    let t_span = 40.0 / model.lambda;
    let mut out = Vec::with_capacity(n);
    for k in 1..=(n as u64) {
        let mut y1 = StateVec::new();
        let mut y2 = StateVec::new();
        for j in 0..dim {
            let u1 = radical_inverse(k, HALTON_PRIMES[j]);
            let u2 = radical_inverse(k, HALTON_PRIMES[dim + j]);
            y1.push(lo[j] + (hi[j] - lo[j]) * u1);
            y2.push(lo[j] + (hi[j] - lo[j]) * u2);
        }
        let t = t_span * radical_inverse(k, HALTON_PRIMES[2 * dim]);
        out.push(ProbePair { y1, y2, t });
    }
    Ok(out)
}

/// Tracks the smallest margin seen and the probe that produced it.
struct Worst {
    margin: f64,
    witness: Option<Witness>,
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            witness: None,
        }
    }

    fn offer<F: FnOnce() -> Witness>(&mut self, margin: f64, make: F) -> Result<()> {
        if !margin.is_finite() {
            return Err(Error::NonFinite("condition margin"));
        }
        if margin < self.margin {
            self.margin = margin;
            self.witness = Some(make());
        }
        Ok(())
    }

    fn finish(self, tol: f64) -> ConditionCheck {
        let witness = self.witness.expect("nonempty probe set");
        ConditionCheck {
            pass: self.margin >= -tol,
            margin: self.margin,
            witness,
        }
    }
}

/// Integral over the jump parameter of |w_theta(wy) - ybar|^(2+r), weighted
/// by the density evaluated at `dy`.
fn theta_moment(model: &ModelSpec, wy: &StateVec, dy: &StateVec, p: f64) -> Result<f64> {
    match model.theta {
        ThetaSpace::Point { value } => {
            Ok(norm_diff(&model.jump(value, wy), &model.ybar).powf(p))
        }
        ThetaSpace::Interval { lo, hi } => quad::integrate(
            |th| norm_diff(&model.jump(th, wy), &model.ybar).powf(p) * model.theta_pdf(dy, th),
            lo,
            hi,
            MOMENT_INNER_TOL,
        ),
    }
}

/// Jump-clock average of the theta moment along the flow with index i,
/// probing the density at the flow started from y.
fn moment_integral(model: &ModelSpec, i: usize, y: &StateVec) -> Result<f64> {
    let p = 2.0 + model.r;
    let mut inner_err: Option<Error> = None;
    let value = quad::integrate_exp_tail(
        |t| {
            let from_ref = model.eval_flow(i, t, &model.ybar);
            let from_probe = model.eval_flow(i, t, y);
            match theta_moment(model, &from_ref, &from_probe, p) {
                Ok(v) => v,
                Err(e) => {
                    inner_err.get_or_insert(e);
                    0.0
                }
            }
        },
        model.lambda,
        MOMENT_OUTER_TOL,
    );
    if let Some(e) = inner_err {
        return Err(e);
    }
    value
}

/// Density-weighted (2+r)-moment of the distance between the two jump
/// images, the tested side of the contraction bound.
fn jump_gap_moment(model: &ModelSpec, y1: &StateVec, y2: &StateVec, p: f64) -> Result<f64> {
    match model.theta {
        ThetaSpace::Point { value } => {
            Ok(norm_diff(&model.jump(value, y1), &model.jump(value, y2)).powf(p))
        }
        ThetaSpace::Interval { lo, hi } => quad::integrate(
            |th| {
                model.theta_pdf(y1, th)
                    * norm_diff(&model.jump(th, y1), &model.jump(th, y2)).powf(p)
            },
            lo,
            hi,
            CHECK_QUAD_TOL,
        ),
    }
}

/// L1 distance between the jump densities at two states.
fn density_l1_gap(model: &ModelSpec, y1: &StateVec, y2: &StateVec) -> Result<f64> {
    match model.theta {
        ThetaSpace::Point { value } => {
            Ok((model.theta_pdf(y1, value) - model.theta_pdf(y2, value)).abs())
        }
        ThetaSpace::Interval { lo, hi } => quad::integrate_abs(
            |th| (model.theta_pdf(y1, th) - model.theta_pdf(y2, th)).abs(),
            lo,
            hi,
            DENSITY_GAP_TOL,
        ),
    }
}

/// Move the boundary between an in-set point and an out-of-set point of
/// `f <= 0` until the bracket is tight.
fn bisect_boundary<F: Fn(f64) -> f64>(f: &F, mut inside: f64, mut outside: f64) -> f64 {
    for _ in 0..60 {
        let m = 0.5 * (inside + outside);
        if f(m) <= 0.0 {
            inside = m;
        } else {
            outside = m;
        }
    }
    0.5 * (inside + outside)
}

/// Mass of the pointwise-minimum density over the parameter region where the
/// two jump images stay within `thr` of each other. The region is located by
/// a grid scan with bisection-refined edges, then integrated segment by
/// segment.
fn overlap_mass(model: &ModelSpec, y1: &StateVec, y2: &StateVec, thr: f64) -> Result<f64> {
    let gap = |th: f64| norm_diff(&model.jump(th, y1), &model.jump(th, y2)) - thr;
    let (lo, hi) = match model.theta {
        ThetaSpace::Point { value } => {
            let mass = if gap(value) <= 0.0 {
                model.theta_pdf(y1, value).min(model.theta_pdf(y2, value))
            } else {
                0.0
            };
            return Ok(mass);
        }
        ThetaSpace::Interval { lo, hi } => (lo, hi),
    };

    let h = (hi - lo) / OVERLAP_GRID as f64;
    let node = |k: usize| lo + k as f64 * h;
    let inside: Vec<bool> = (0..=OVERLAP_GRID).map(|k| gap(node(k)) <= 0.0).collect();

    let mut segments: Vec<(f64, f64)> = Vec::new();
    let mut start: Option<f64> = None;
    if inside[0] {
        start = Some(lo);
    }
    for k in 0..OVERLAP_GRID {
        match (inside[k], inside[k + 1]) {
            (true, false) => {
                let edge = bisect_boundary(&gap, node(k), node(k + 1));
                if let Some(a) = start.take() {
                    segments.push((a, edge));
                }
            }
            (false, true) => {
                start = Some(bisect_boundary(&gap, node(k + 1), node(k)));
            }
            _ => {}
        }
    }
    if let Some(a) = start {
        segments.push((a, hi));
    }

    let mut mass = 0.0;
    for (a, b) in segments {
        if b > a {
            mass += quad::integrate(
                |th| model.theta_pdf(y1, th).min(model.theta_pdf(y2, th)),
                a,
                b,
                CHECK_QUAD_TOL,
            )?;
        }
    }
    Ok(mass)
}

/// Evaluate all five regularity checks on the probe set. A check passes when
/// its worst margin is at least `-tol`; raising `tol` can only turn failures
/// into passes, never the reverse.
pub fn check_conditions(
    model: &ModelSpec,
    probes: &[ProbePair],
    tol: f64,
) -> Result<ConditionReport> {
    check_conditions_capped(model, probes, tol, DEFAULT_MOMENT_CAP)
}

/// Same as [`check_conditions`] with an explicit cap for the moment check.
pub fn check_conditions_capped(
    model: &ModelSpec,
    probes: &[ProbePair],
    tol: f64,
    moment_cap: f64,
) -> Result<ConditionReport> {
    if probes.is_empty() {
        return Err(Error::InsufficientSamples(
            "condition checks need at least one probe pair".into(),
        ));
    }
    if !(tol >= 0.0 && tol.is_finite()) {
        return Err(Error::InvalidConfig(
            "condition tolerance must be finite and nonnegative".into(),
        ));
    }
    let k = model.consts;
    let p = 2.0 + model.r;

    // Finiteness proxy: the clock-averaged jump moment stays under the cap.
    // The integral depends on the probe only through the density argument,
    // so a state-independent density needs one evaluation per flow.
    let mut moment = Worst::new();
    let state_dep = matches!(model.density, JumpDensity::StateTilted { .. });
    let mut sup_points: Vec<&StateVec> = Vec::new();
    if state_dep {
        for pr in probes.iter().take(MOMENT_SUP_POINTS / 2) {
            sup_points.push(&pr.y1);
            sup_points.push(&pr.y2);
        }
    } else {
        sup_points.push(&probes[0].y1);
    }
    for i in 1..=model.num_flows {
        for &y in &sup_points {
            let value = moment_integral(model, i, y)?;
            moment.offer(moment_cap - value, || Witness {
                y1: y.to_vec(),
                y2: y.to_vec(),
                i1: Some(i),
                i2: Some(i),
                t: None,
                lhs: value,
                rhs: moment_cap,
                part: "moment",
            })?;
        }
    }

    // Flow stability: exponential in time, plus a linear term across flows.
    let mut flow = Worst::new();
    for pr in probes {
        let dist = norm_diff(&pr.y1, &pr.y2);
        for i1 in 1..=model.num_flows {
            let a = model.eval_flow(i1, pr.t, &pr.y1);
            for i2 in 1..=model.num_flows {
                let b = model.eval_flow(i2, pr.t, &pr.y2);
                let lhs = norm_diff(&a, &b);
                let mismatch = if i1 != i2 { 1.0 } else { 0.0 };
                let rhs = k.flow_lipschitz * (k.flow_growth * pr.t).exp() * dist
                    + pr.t * k.flow_gap * mismatch;
                let margin = if dist == 0.0 && i1 == i2 {
                    k.flow_lipschitz
                } else {
                    rhs - lhs
                };
                flow.offer(margin, || Witness {
                    y1: pr.y1.to_vec(),
                    y2: pr.y2.to_vec(),
                    i1: Some(i1),
                    i2: Some(i2),
                    t: Some(pr.t),
                    lhs,
                    rhs,
                    part: "flow",
                })?;
            }
        }
    }

    // Jump contraction in the (2+r)-moment.
    let mut jump = Worst::new();
    for pr in probes {
        let dist = norm_diff(&pr.y1, &pr.y2);
        let (margin, lhs, rhs) = if dist == 0.0 {
            (k.jump_contraction, 0.0, 0.0)
        } else {
            let lhs = jump_gap_moment(model, &pr.y1, &pr.y2, p)?;
            let rhs = k.jump_contraction * dist.powf(p);
            (rhs - lhs, lhs, rhs)
        };
        jump.offer(margin, || Witness {
            y1: pr.y1.to_vec(),
            y2: pr.y2.to_vec(),
            i1: None,
            i2: None,
            t: None,
            lhs,
            rhs,
            part: "jump moment",
        })?;
    }

    // Lipschitz continuity of the switching rows (total variation, worst
    // row) and of the jump density (L1).
    let mut lips = Worst::new();
    for pr in probes {
        let dist = norm_diff(&pr.y1, &pr.y2);
        if dist == 0.0 {
            lips.offer(k.switch_lipschitz.min(k.density_lipschitz), || Witness {
                y1: pr.y1.to_vec(),
                y2: pr.y2.to_vec(),
                i1: None,
                i2: None,
                t: None,
                lhs: 0.0,
                rhs: 0.0,
                part: "degenerate pair",
            })?;
            continue;
        }
        for i in 1..=model.num_flows {
            let r1 = model.switch_row(i, &pr.y1);
            let r2 = model.switch_row(i, &pr.y2);
            let lhs: f64 = r1.iter().zip(r2.iter()).map(|(a, b)| (a - b).abs()).sum();
            let rhs = k.switch_lipschitz * dist;
            lips.offer(rhs - lhs, || Witness {
                y1: pr.y1.to_vec(),
                y2: pr.y2.to_vec(),
                i1: Some(i),
                i2: Some(i),
                t: None,
                lhs,
                rhs,
                part: "switch rows",
            })?;
        }
        let lhs = density_l1_gap(model, &pr.y1, &pr.y2)?;
        let rhs = k.density_lipschitz * dist;
        lips.offer(rhs - lhs, || Witness {
            y1: pr.y1.to_vec(),
            y2: pr.y2.to_vec(),
            i1: None,
            i2: None,
            t: None,
            lhs,
            rhs,
            part: "density",
        })?;
    }

    // Overlap lower bounds: common row mass across index pairs, and common
    // density mass over the contraction region of the jump parameter.
    let mut over = Worst::new();
    for pr in probes {
        let dist = norm_diff(&pr.y1, &pr.y2);
        for i1 in 1..=model.num_flows {
            let r1 = model.switch_row(i1, &pr.y1);
            for i2 in 1..=model.num_flows {
                let r2 = model.switch_row(i2, &pr.y2);
                let lhs: f64 = r1.iter().zip(r2.iter()).map(|(a, b)| a.min(*b)).sum();
                over.offer(lhs - k.switch_overlap, || Witness {
                    y1: pr.y1.to_vec(),
                    y2: pr.y2.to_vec(),
                    i1: Some(i1),
                    i2: Some(i2),
                    t: None,
                    lhs,
                    rhs: k.switch_overlap,
                    part: "row overlap",
                })?;
            }
        }
        let thr = k.jump_contraction * dist;
        let mass = overlap_mass(model, &pr.y1, &pr.y2, thr)?;
        over.offer(mass - k.density_overlap, || Witness {
            y1: pr.y1.to_vec(),
            y2: pr.y2.to_vec(),
            i1: None,
            i2: None,
            t: None,
            lhs: mass,
            rhs: k.density_overlap,
            part: "density overlap",
        })?;
    }

    Ok(ConditionReport {
        model: model.name.clone(),
        probes: probes.len(),
        tol,
        tail_bound: (-40.0f64).exp(),
        moment_integrability: moment.finish(tol),
        flow_lipschitz: flow.finish(tol),
        jump_contraction: jump.finish(tol),
        kernel_lipschitz: lips.finish(tol),
        kernel_overlap: over.finish(tol),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{build_model, Dynamics, ModelConfig};
    use crate::gallery::load_gallery;
    use crate::model::{Constants, Flow, JumpMap, Noise, StateSpace, Switching};
    use crate::space::svec;
    use proptest::prelude::*;

    fn sqrt_jump_config() -> ModelConfig {
        ModelConfig {
            name: "sqrt-jump".into(),
            dynamics: Dynamics {
                jump_rate: 1.0,
                moment_exponent: 1.0,
                metric_weight: 1.0,
                reference_point: vec![0.25],
            },
            flow: vec![Flow::Relaxation {
                target: vec![0.0],
                rate: 1.0,
            }],
            jump_map: JumpMap::SqrtY,
            theta: ThetaSpace::Point { value: 0.5 },
            jump_density: JumpDensity::Uniform,
            switching: Switching::Constant {
                rows: vec![vec![1.0]],
            },
            noise: Noise::None,
            state_space: StateSpace::Box {
                lo: vec![0.0],
                hi: vec![1.0],
            },
            constants: Constants {
                flow_lipschitz: 1.0,
                flow_growth: -0.95,
                flow_gap: 1.0,
                jump_contraction: 0.5,
                switch_lipschitz: 0.5,
                density_lipschitz: 0.5,
                switch_overlap: 0.5,
                density_overlap: 0.5,
            },
        }
    }

    #[test]
    fn probes_are_deterministic_and_inside_box() {
        let model = load_gallery("relaxation").unwrap().spec;
        let a = halton_probes(&model, 50).unwrap();
        let b = halton_probes(&model, 50).unwrap();
        assert_eq!(a.len(), 50);
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.y1.as_slice(), pb.y1.as_slice());
            assert_eq!(pa.y2.as_slice(), pb.y2.as_slice());
            assert_eq!(pa.t, pb.t);
            assert!(model.contains(&pa.y1) && model.contains(&pa.y2));
            assert!(pa.t > 0.0 && pa.t <= 40.0);
        }
    }

    #[test]
    fn relaxation_passes_all_checks_with_positive_margin() {
        let model = load_gallery("relaxation").unwrap().spec;
        let probes = halton_probes(&model, 1000).unwrap();
        let report = check_conditions(&model, &probes, 1e-9).unwrap();
        assert!(report.all_pass());
        for (name, check) in report.entries() {
            assert!(check.margin > 0.0, "{name}: margin {}", check.margin);
        }
        // the jump contracts distances by 1/2, so the cubed-moment factor is
        // 1/8 and the worst probe margin stays near (0.55 - 0.125) dist^3
        let w = &report.jump_contraction.witness;
        let d = (w.y1[0] - w.y2[0]).abs();
        assert!((w.lhs - 0.125 * d.powi(3)).abs() < 1e-6);
    }

    #[test]
    fn two_flow_switch_passes_including_cross_flow_bound() {
        let model = load_gallery("two-flow-switch").unwrap().spec;
        let probes = halton_probes(&model, 150).unwrap();
        let report = check_conditions(&model, &probes, 1e-9).unwrap();
        assert!(report.all_pass(), "{}", report.to_json().unwrap());
        for (_, check) in report.entries() {
            assert!(check.margin > 0.0);
        }
    }

    #[test]
    fn sqrt_jump_map_fails_the_contraction_check_with_witness() {
        let model = build_model(&sqrt_jump_config()).unwrap();
        let probes = halton_probes(&model, 64).unwrap();
        let report = check_conditions(&model, &probes, 1e-9).unwrap();
        assert!(!report.jump_contraction.pass);
        assert!(report.jump_contraction.margin < 0.0);
        assert!(!report.all_pass());
        let w = &report.jump_contraction.witness;
        assert!(w.lhs > w.rhs);
        // square roots of a witness pair really are further apart than the
        // contracted distance
        let gap = (w.y1[0].sqrt() - w.y2[0].sqrt()).abs();
        assert!(gap.powi(3) > 0.5 * (w.y1[0] - w.y2[0]).abs().powi(3));
    }

    #[test]
    fn zero_distance_pair_reports_leading_constants() {
        let model = load_gallery("relaxation").unwrap().spec;
        let probes = vec![ProbePair {
            y1: svec(&[0.7]),
            y2: svec(&[0.7]),
            t: 1.0,
        }];
        let report = check_conditions(&model, &probes, 0.0).unwrap();
        assert!(report.all_pass());
        assert_eq!(report.flow_lipschitz.margin, 1.0);
        assert_eq!(report.jump_contraction.margin, 0.55);
        assert_eq!(report.kernel_lipschitz.margin, 0.5);
        // overlap bounds stay well defined at zero distance: full common mass
        assert!((report.kernel_overlap.margin - 0.5).abs() < 1e-8);
    }

    #[test]
    fn empty_probe_set_is_rejected() {
        let model = load_gallery("relaxation").unwrap().spec;
        let err = check_conditions(&model, &[], 1e-9).unwrap_err();
        assert!(matches!(err, Error::InsufficientSamples(_)));
    }

    #[test]
    fn report_serializes_with_per_check_fields() {
        let model = load_gallery("iid-jump").unwrap().spec;
        let probes = halton_probes(&model, 16).unwrap();
        let report = check_conditions(&model, &probes, 1e-9).unwrap();
        let text = report.to_json().unwrap();
        for key in ["pass", "margin", "witness", "kernel_overlap"] {
            assert!(text.contains(key), "missing {key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(8))]

        // loosening the tolerance never turns a pass into a fail
        #[test]
        fn pass_is_monotone_in_tol(t1 in 0.0..0.5f64, t2 in 0.0..0.5f64) {
            let (tight, loose) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            let model = load_gallery("iid-jump").unwrap().spec;
            let probes = halton_probes(&model, 4).unwrap();
            let a = check_conditions(&model, &probes, tight).unwrap();
            let b = check_conditions(&model, &probes, loose).unwrap();
            for ((_, ca), (_, cb)) in a.entries().iter().zip(b.entries().iter()) {
                prop_assert!(!ca.pass || cb.pass);
            }
        }
    }
}
