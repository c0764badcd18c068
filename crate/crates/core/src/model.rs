//! Model families and the validated model specification.
//!
//! A model is a declarative pick from closed-form families: semiflows S_i,
//! a jump map w_theta, a jump-parameter density p(y, .), a switching matrix
//! pi_ij(y), and a small-ball noise law. Keeping every family closed-form is
//! what makes quadrature oracles possible throughout the test suite.

use crate::error::Result;
use crate::sampler;
use crate::space::{svec, StateVec};
use arrayvec::ArrayVec;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Hard cap on the number of flows; switching rows are stack-allocated.
pub const MAX_FLOWS: usize = 8;

pub type SwitchRow = ArrayVec<f64, MAX_FLOWS>;

/// Deterministic semiflow families. All satisfy S(0,y) = y and the
/// composition identity S(t+s,y) = S(t, S(s,y)) exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Flow {
    /// S(t, y) = y.
    Identity,
    /// Coordinatewise pull toward `target`: S(t,y) = q + (y-q) e^(-rate t).
    Relaxation { target: Vec<f64>, rate: f64 },
}

impl Flow {
    pub fn eval(&self, t: f64, y: &StateVec) -> StateVec {
        match self {
            Flow::Identity => y.clone(),
            Flow::Relaxation { target, rate } => {
                let decay = (-rate * t).exp();
                let mut out = StateVec::new();
                for (k, &yk) in y.iter().enumerate() {
                    out.push(target[k] + (yk - target[k]) * decay);
                }
                out
            }
        }
    }

    /// Closed form of int_0^inf lambda e^(-lambda t) S(t,y) dt, the mean
    /// pre-jump state seen from y under an exponential clock.
    pub fn exp_average(&self, lambda: f64, y: &StateVec) -> StateVec {
        match self {
            Flow::Identity => y.clone(),
            Flow::Relaxation { target, rate } => {
                let frac = lambda / (lambda + rate);
                let mut out = StateVec::new();
                for (k, &yk) in y.iter().enumerate() {
                    out.push(target[k] + (yk - target[k]) * frac);
                }
                out
            }
        }
    }

    /// Closed form of int_{t0}^{t1} (a . S(s,y) + b) ds for an affine
    /// integrand; the fast path under every path integral.
    pub fn affine_segment_integral(
        &self,
        a: &[f64],
        b: f64,
        y: &StateVec,
        t0: f64,
        t1: f64,
    ) -> f64 {
        match self {
            Flow::Identity => {
                let g: f64 = a.iter().zip(y.iter()).map(|(ak, yk)| ak * yk).sum::<f64>() + b;
                g * (t1 - t0)
            }
            Flow::Relaxation { target, rate } => {
                let mut at_target = b;
                let mut along = 0.0;
                for (k, &ak) in a.iter().enumerate() {
                    at_target += ak * target[k];
                    along += ak * (y[k] - target[k]);
                }
                at_target * (t1 - t0) + along * ((-rate * t0).exp() - (-rate * t1).exp()) / rate
            }
        }
    }
}

/// Jump transformation w_theta applied to the pre-jump state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpMap {
    /// w_theta(y) = scale_y * y + theta * dir + offset.
    Affine {
        scale_y: f64,
        dir: Vec<f64>,
        offset: Vec<f64>,
    },
    /// w_theta(y) = sqrt(y) in one dimension, ignoring theta. Not Lipschitz
    /// near 0; exists to exercise the failing branch of the moment check.
    SqrtY,
}

impl JumpMap {
    pub fn apply(&self, theta: f64, y: &StateVec) -> StateVec {
        match self {
            JumpMap::Affine {
                scale_y,
                dir,
                offset,
            } => {
                let mut out = StateVec::new();
                for (k, &yk) in y.iter().enumerate() {
                    out.push(scale_y * yk + theta * dir[k] + offset[k]);
                }
                out
            }
            JumpMap::SqrtY => svec(&[y[0].max(0.0).sqrt()]),
        }
    }
}

/// Jump-parameter space Theta with its finite base measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaSpace {
    /// Interval [lo, hi] with Lebesgue base measure.
    Interval { lo: f64, hi: f64 },
    /// Single atom; every draw returns `value`.
    Point { value: f64 },
}

impl ThetaSpace {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            ThetaSpace::Interval { lo, hi } => (lo, hi),
            ThetaSpace::Point { value } => (value, value),
        }
    }
}

/// Density p(y, theta) of the jump parameter given the pre-jump state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JumpDensity {
    Uniform,
    Beta { alpha: f64, beta: f64 },
    /// State-independent linear tilt about `pivot`.
    Tilted { slope: f64, pivot: f64 },
    /// State-dependent tilt: effective slope gain * tanh(y_0 - center) about
    /// the interval midpoint, so normalization holds for every y.
    StateTilted { gain: f64, center: f64 },
}

/// Switching matrix pi_ij(y): row i gives the law of the next flow index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Switching {
    /// State-independent rows.
    Constant { rows: Vec<Vec<f64>> },
    /// Two flows; stay probability stay + swing * tanh(y_0 - center), the
    /// same for both rows.
    Tanh2 { stay: f64, swing: f64, center: f64 },
}

/// Noise law on the ambient space, supported in the closed ball B(0, eps).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    /// Point mass at 0.
    None,
    UniformBall { eps: f64 },
    /// Centered Gaussian with scale sd conditioned on the ball.
    TruncGauss { sd: f64, eps: f64 },
}

impl Noise {
    pub fn eps(&self) -> f64 {
        match *self {
            Noise::None => 0.0,
            Noise::UniformBall { eps } | Noise::TruncGauss { eps, .. } => eps,
        }
    }
}

/// State space Y as a containment predicate plus a probe box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StateSpace {
    /// Whole ambient space of the given dimension.
    All { dim: usize },
    /// Axis-aligned closed box.
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl StateSpace {
    pub fn dim(&self) -> usize {
        match self {
            StateSpace::All { dim } => *dim,
            StateSpace::Box { lo, .. } => lo.len(),
        }
    }

    pub fn contains(&self, y: &StateVec) -> bool {
        match self {
            StateSpace::All { dim } => y.len() == *dim,
            StateSpace::Box { lo, hi } => {
                y.len() == lo.len()
                    && y.iter()
                        .enumerate()
                        // tiny slack so exact-boundary images are not escapes
                        .all(|(k, &v)| v >= lo[k] - 1e-9 && v <= hi[k] + 1e-9)
            }
        }
    }

    /// Box the condition probes are drawn from; None when unbounded.
    pub fn probe_box(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            StateSpace::All { .. } => None,
            StateSpace::Box { lo, hi } => Some((lo.clone(), hi.clone())),
        }
    }
}

/// Declared regularity and contraction constants. Each is an upper (or for
/// `flow_growth` signed) bound the numeric condition checks test against;
/// they also enter the drift balance inequality at build time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Prefactor of the flow stability bound.
    pub flow_lipschitz: f64,
    /// Exponential rate in the flow stability bound; negative means decay.
    pub flow_growth: f64,
    /// Linear-in-time bound on the gap between distinct flows.
    pub flow_gap: f64,
    /// Contraction factor of the jump map, both in the (2+r)-moment bound
    /// and as the radius factor of the overlap parameter set.
    pub jump_contraction: f64,
    /// Lipschitz bound on y -> switching row, total variation.
    pub switch_lipschitz: f64,
    /// Lipschitz bound on y -> jump density, L1 in theta.
    pub density_lipschitz: f64,
    /// Lower bound on the switching-row overlap.
    pub switch_overlap: f64,
    /// Lower bound on the density overlap over the contraction set.
    pub density_overlap: f64,
}

/// Validated model instance. Construct through `config::build_model`; fields
/// are immutable afterwards and the value is freely shareable across threads.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub name: String,
    pub dim: usize,
    pub num_flows: usize,
    /// Poisson jump intensity.
    pub lambda: f64,
    /// Extra moment exponent r in (0, 2); all moment bounds use power 2+r.
    pub r: f64,
    /// Index-mismatch weight in the hybrid metric.
    pub c: f64,
    /// Reference point of the Lyapunov function.
    pub ybar: StateVec,
    pub flows: Vec<Flow>,
    pub jump_map: JumpMap,
    pub theta: ThetaSpace,
    pub density: JumpDensity,
    pub switching: Switching,
    pub noise: Noise,
    pub consts: Constants,
    pub space: StateSpace,
    /// Hash of the canonical config text; stamped into every manifest.
    pub hash: String,
}

impl ModelSpec {
    /// Flow for a 1-based index.
    pub fn flow(&self, i: usize) -> &Flow {
        &self.flows[i - 1]
    }

    pub fn eval_flow(&self, i: usize, t: f64, y: &StateVec) -> StateVec {
        self.flow(i).eval(t, y)
    }

    /// Left side of the drift balance inequality,
    /// L^(2+r) * L_w + (2+r) * alpha / lambda.
    pub fn balance_lhs(&self) -> f64 {
        let p = 2.0 + self.r;
        self.consts.flow_lipschitz.powf(p) * self.consts.jump_contraction
            + p * self.consts.flow_growth / self.lambda
    }

    /// Switching row at a 1-based flow index, evaluated at the post-noise
    /// state. Rows sum to 1 by construction of both families.
    pub fn switch_row(&self, i: usize, y: &StateVec) -> SwitchRow {
        let mut row = SwitchRow::new();
        match &self.switching {
            Switching::Constant { rows } => {
                for &w in &rows[i - 1] {
                    row.push(w);
                }
            }
            Switching::Tanh2 {
                stay,
                swing,
                center,
            } => {
                let s = stay + swing * (y[0] - center).tanh();
                if i == 1 {
                    row.push(s);
                    row.push(1.0 - s);
                } else {
                    row.push(1.0 - s);
                    row.push(s);
                }
            }
        }
        debug_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        row
    }

    /// Jump-parameter density p(y, theta) at the pre-jump state y, with
    /// respect to the base measure of Theta.
    pub fn theta_pdf(&self, y: &StateVec, theta: f64) -> f64 {
        let (lo, hi) = self.theta.bounds();
        if let ThetaSpace::Point { value } = self.theta {
            return if theta == value { 1.0 } else { 0.0 };
        }
        match self.density {
            JumpDensity::Uniform => {
                if (lo..=hi).contains(&theta) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            JumpDensity::Beta { alpha, beta } => {
                sampler::beta_scaled_pdf(theta, alpha, beta, lo, hi)
            }
            JumpDensity::Tilted { slope, pivot } => {
                sampler::tilted_pdf(theta, lo, hi, slope, pivot)
            }
            JumpDensity::StateTilted { gain, center } => {
                let s = gain * (y[0] - center).tanh();
                sampler::tilted_pdf(theta, lo, hi, s, 0.5 * (lo + hi))
            }
        }
    }

    /// Draw theta from p(y, .) at the pre-jump state y.
    pub fn draw_theta<R: Rng + ?Sized>(&self, rng: &mut R, y: &StateVec) -> f64 {
        let (lo, hi) = self.theta.bounds();
        if let ThetaSpace::Point { value } = self.theta {
            return value;
        }
        match self.density {
            JumpDensity::Uniform => sampler::draw_uniform_in(rng, lo, hi),
            JumpDensity::Beta { alpha, beta } => {
                sampler::draw_beta_scaled(rng, alpha, beta, lo, hi)
            }
            JumpDensity::Tilted { slope, pivot } => {
                sampler::draw_tilted(rng, lo, hi, slope, pivot)
            }
            JumpDensity::StateTilted { gain, center } => {
                let s = gain * (y[0] - center).tanh();
                sampler::draw_tilted(rng, lo, hi, s, 0.5 * (lo + hi))
            }
        }
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StateVec> {
        match self.noise {
            Noise::None => Ok(svec(&vec![0.0; self.dim])),
            Noise::UniformBall { eps } => Ok(sampler::draw_uniform_ball(rng, eps, self.dim)),
            Noise::TruncGauss { sd, eps } => sampler::draw_trunc_gauss(rng, sd, eps, self.dim),
        }
    }

    /// Post-jump location before noise, w_theta(y).
    pub fn jump(&self, theta: f64, y: &StateVec) -> StateVec {
        self.jump_map.apply(theta, y)
    }

    pub fn eps(&self) -> f64 {
        self.noise.eps()
    }

    pub fn contains(&self, y: &StateVec) -> bool {
        self.space.contains(y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SeedStream;
    use crate::space::svec;

    fn relax(target: f64, rate: f64) -> Flow {
        Flow::Relaxation {
            target: vec![target],
            rate,
        }
    }

    #[test]
    fn semiflow_identities_hold() {
        let flows = [Flow::Identity, relax(1.0, 0.7)];
        let y = svec(&[3.2]);
        for f in &flows {
            assert_eq!(f.eval(0.0, &y)[0], y[0]);
            for (t, s) in [(0.3, 1.1), (2.0, 0.01), (5.0, 5.0)] {
                let once = f.eval(t + s, &y);
                let twice = f.eval(t, &f.eval(s, &y));
                assert!((once[0] - twice[0]).abs() < 1e-9, "t={t}, s={s}");
            }
        }
    }

    #[test]
    fn exp_average_matches_quadrature() {
        let f = relax(0.5, 2.0);
        let y = svec(&[4.0]);
        for lambda in [0.5, 1.0, 3.0] {
            let closed = f.exp_average(lambda, &y)[0];
            let quad = crate::quad::integrate_exp_tail(
                |t| lambda * f.eval(t, &y)[0],
                lambda,
                1e-12,
            )
            .unwrap();
            assert!((closed - quad).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_segment_integral_matches_quadrature() {
        let cases = [Flow::Identity, relax(1.5, 0.8)];
        let y = svec(&[3.0]);
        for f in &cases {
            let closed = f.affine_segment_integral(&[2.0], -0.5, &y, 0.3, 2.1);
            let quad =
                crate::quad::integrate(|s| 2.0 * f.eval(s, &y)[0] - 0.5, 0.3, 2.1, 1e-12).unwrap();
            assert!((closed - quad).abs() < 1e-10, "{f:?}");
        }
    }

    #[test]
    fn jump_map_families_evaluate() {
        let aff = JumpMap::Affine {
            scale_y: 0.5,
            dir: vec![0.5],
            offset: vec![0.2],
        };
        assert!((aff.apply(1.0, &svec(&[4.0]))[0] - 2.7).abs() < 1e-15);
        assert_eq!(JumpMap::SqrtY.apply(0.3, &svec(&[9.0]))[0], 3.0);
    }

    #[test]
    fn box_containment_has_boundary_slack() {
        let s = StateSpace::Box {
            lo: vec![0.0],
            hi: vec![1.0],
        };
        assert!(s.contains(&svec(&[1.0])));
        assert!(s.contains(&svec(&[1.0 + 1e-12])));
        assert!(!s.contains(&svec(&[1.1])));
        assert!(!s.contains(&svec(&[0.5, 0.5])));
    }

    #[test]
    fn state_tilted_density_normalizes_for_every_state() {
        let m = crate::gallery::load_gallery("two-flow-switch").unwrap();
        for y0 in [0.0, 0.7, 4.0] {
            let y = svec(&[y0]);
            let total =
                crate::quad::integrate(|t| m.spec.theta_pdf(&y, t), 0.0, 1.0, 1e-11).unwrap();
            assert!((total - 1.0).abs() < 1e-9, "y0={y0}");
        }
    }

    #[test]
    fn tanh2_rows_are_proper_and_state_dependent() {
        let m = crate::gallery::load_gallery("two-flow-switch").unwrap();
        let near = m.spec.switch_row(1, &svec(&[1.0]));
        let far = m.spec.switch_row(1, &svec(&[9.0]));
        assert!((near.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(near[0] != far[0]);
        // row 2 mirrors row 1
        let r2 = m.spec.switch_row(2, &svec(&[9.0]));
        assert_eq!(r2[1], far[0]);
    }

    #[test]
    fn point_theta_always_returns_the_atom() {
        let mut rng = SeedStream::new(11).rng(0);
        let m = {
            let mut g = crate::gallery::load_gallery("relaxation").unwrap().spec;
            g.theta = ThetaSpace::Point { value: 0.25 };
            g
        };
        for _ in 0..32 {
            assert_eq!(m.draw_theta(&mut rng, &svec(&[1.0])), 0.25);
        }
        assert_eq!(m.theta_pdf(&svec(&[1.0]), 0.25), 1.0);
    }
}
