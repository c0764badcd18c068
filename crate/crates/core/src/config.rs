//! Config schema, validation, and the only constructor of `ModelSpec`.
//!
//! A model config is one TOML document naming a flow family plus parameters;
//! `build_model` validates everything that can fail fast (dimensions, row
//! sums, density positivity, the drift balance inequality) and stamps the
//! spec with a hash of its canonical text form.

use crate::error::{Error, Result};
use crate::model::{
    Constants, Flow, JumpDensity, JumpMap, ModelSpec, Noise, StateSpace, Switching, ThetaSpace,
    MAX_FLOWS,
};
use crate::space::{svec, MAX_DIM};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dynamics {
    /// Poisson jump intensity, 1/time.
    pub jump_rate: f64,
    /// Extra moment exponent r in (0, 2).
    pub moment_exponent: f64,
    /// Weight of an index mismatch in the hybrid metric, at least 1.
    pub metric_weight: f64,
    /// Reference point of the Lyapunov function.
    pub reference_point: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub dynamics: Dynamics,
    /// One entry per flow index, 1-based in every API.
    pub flow: Vec<Flow>,
    pub jump_map: JumpMap,
    pub theta: ThetaSpace,
    pub jump_density: JumpDensity,
    pub switching: Switching,
    pub noise: Noise,
    pub state_space: StateSpace,
    pub constants: Constants,
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Hex SHA-256 of the canonical TOML form; identifies the model in
    /// manifests and reports.
    pub fn hash(&self) -> Result<String> {
        let canon = self.to_toml()?;
        let mut h = Sha256::new();
        h.update(canon.as_bytes());
        Ok(hex::encode(h.finalize()))
    }
}

fn expect_dim(what: &str, got: usize, dim: usize) -> Result<()> {
    if got != dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} has dimension {got}, state space has {dim}"
        )));
    }
    Ok(())
}

fn validate_switching(sw: &Switching, m: usize) -> Result<()> {
    match sw {
        Switching::Constant { rows } => {
            if rows.len() != m {
                return Err(Error::InvalidConfig(format!(
                    "switching has {} rows for {m} flows",
                    rows.len()
                )));
            }
            for (k, row) in rows.iter().enumerate() {
                if row.len() != m {
                    return Err(Error::InvalidConfig(format!(
                        "switching row {} has {} entries for {m} flows",
                        k + 1,
                        row.len()
                    )));
                }
                if row.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                    return Err(Error::InvalidConfig(format!(
                        "switching row {} has entries outside [0, 1]",
                        k + 1
                    )));
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > 1e-12 {
                    return Err(Error::InvalidRowSum { row: k + 1, sum });
                }
            }
        }
        Switching::Tanh2 { stay, swing, .. } => {
            if m != 2 {
                return Err(Error::InvalidConfig(format!(
                    "tanh2 switching needs exactly 2 flows, got {m}"
                )));
            }
            let (lo, hi) = (stay - swing.abs(), stay + swing.abs());
            if !(lo > 0.0 && hi < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "tanh2 stay probability ranges over [{lo}, {hi}], outside (0, 1)"
                )));
            }
        }
    }
    Ok(())
}

fn validate_density(d: &JumpDensity, theta: &ThetaSpace) -> Result<()> {
    let (lo, hi) = theta.bounds();
    if let ThetaSpace::Interval { .. } = theta {
        if !(lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "theta interval [{lo}, {hi}] is empty"
            )));
        }
    }
    match *d {
        JumpDensity::Uniform => {}
        JumpDensity::Beta { alpha, beta } => {
            if !(alpha > 0.0 && beta > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "beta density needs positive shapes, got ({alpha}, {beta})"
                )));
            }
        }
        JumpDensity::Tilted { slope, pivot } => {
            let at_lo = 1.0 + slope * (lo - pivot);
            let at_hi = 1.0 + slope * (hi - pivot);
            if at_lo <= 0.0 || at_hi <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "tilted density goes nonpositive on the interval (endpoint values {at_lo}, {at_hi})"
                )));
            }
        }
        JumpDensity::StateTilted { gain, .. } => {
            // worst case |tanh| = 1 and theta at an endpoint
            if gain.abs() * 0.5 * (hi - lo) >= 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "state-tilted density can go nonpositive: |gain| {} times half-width {} reaches 1",
                    gain.abs(),
                    0.5 * (hi - lo)
                )));
            }
        }
    }
    Ok(())
}

/// Validate a config and produce the immutable model value every other
/// module consumes.
pub fn build_model(cfg: &ModelConfig) -> Result<ModelSpec> {
    let dim = cfg.state_space.dim();
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidConfig(format!(
            "state dimension {dim} outside 1..={MAX_DIM}"
        )));
    }
    let m = cfg.flow.len();
    if m == 0 || m > MAX_FLOWS {
        return Err(Error::InvalidConfig(format!(
            "{m} flows outside 1..={MAX_FLOWS}"
        )));
    }
    if !(cfg.dynamics.jump_rate > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "jump rate must be positive, got {}",
            cfg.dynamics.jump_rate
        )));
    }
    if !(cfg.dynamics.metric_weight >= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "metric weight must be at least 1, got {}",
            cfg.dynamics.metric_weight
        )));
    }
    let r = cfg.dynamics.moment_exponent;
    if !(r > 0.0 && r < 2.0) {
        return Err(Error::InvalidConfig(format!(
            "moment exponent must lie in (0, 2), got {r}"
        )));
    }
    expect_dim("reference point", cfg.dynamics.reference_point.len(), dim)?;
    for (k, f) in cfg.flow.iter().enumerate() {
        if let Flow::Relaxation { target, rate } = f {
            expect_dim(&format!("flow {} target", k + 1), target.len(), dim)?;
            if !(*rate > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "flow {} relaxation rate must be positive",
                    k + 1
                )));
            }
        }
    }
    match &cfg.jump_map {
        JumpMap::Affine { dir, offset, .. } => {
            expect_dim("jump direction", dir.len(), dim)?;
            expect_dim("jump offset", offset.len(), dim)?;
        }
        JumpMap::SqrtY => {
            expect_dim("sqrt jump map", 1, dim)?;
            if let StateSpace::Box { lo, .. } = &cfg.state_space {
                if lo[0] < 0.0 {
                    return Err(Error::InvalidConfig(
                        "sqrt jump map needs a nonnegative state space".into(),
                    ));
                }
            }
        }
    }
    validate_density(&cfg.jump_density, &cfg.theta)?;
    validate_switching(&cfg.switching, m)?;
    match cfg.noise {
        Noise::None => {}
        Noise::UniformBall { eps } | Noise::TruncGauss { eps, .. } => {
            if !(eps > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "noise radius must be positive, got {eps}"
                )));
            }
            if let Noise::TruncGauss { sd, .. } = cfg.noise {
                if !(sd > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "noise scale must be positive, got {sd}"
                    )));
                }
            }
            if let StateSpace::Box { lo, hi } = &cfg.state_space {
                let diam: f64 = lo
                    .iter()
                    .zip(hi.iter())
                    .map(|(l, h)| (h - l) * (h - l))
                    .sum::<f64>()
                    .sqrt();
                if eps > diam {
                    return Err(Error::NoiseSupportTooLarge { eps, bound: diam });
                }
            }
        }
    }
    let ybar = svec(&cfg.dynamics.reference_point);
    if !cfg.state_space.contains(&ybar) {
        return Err(Error::InvalidConfig(
            "reference point lies outside the state space".into(),
        ));
    }
    let p = 2.0 + r;
    let lhs = cfg.constants.flow_lipschitz.powf(p) * cfg.constants.jump_contraction
        + p * cfg.constants.flow_growth / cfg.dynamics.jump_rate;
    if !(lhs < 1.0) {
        return Err(Error::BalanceViolation { lhs });
    }
    Ok(ModelSpec {
        name: cfg.name.clone(),
        dim,
        num_flows: m,
        lambda: cfg.dynamics.jump_rate,
        r,
        c: cfg.dynamics.metric_weight,
        ybar,
        flows: cfg.flow.clone(),
        jump_map: cfg.jump_map.clone(),
        theta: cfg.theta.clone(),
        density: cfg.jump_density.clone(),
        switching: cfg.switching.clone(),
        noise: cfg.noise.clone(),
        consts: cfg.constants,
        space: cfg.state_space.clone(),
        hash: cfg.hash()?,
    })
}

impl ModelSpec {
    /// Reconstruct the config this spec was built from (round-trips through
    /// `build_model` to the same hash).
    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            name: self.name.clone(),
            dynamics: Dynamics {
                jump_rate: self.lambda,
                moment_exponent: self.r,
                metric_weight: self.c,
                reference_point: self.ybar.to_vec(),
            },
            flow: self.flows.clone(),
            jump_map: self.jump_map.clone(),
            theta: self.theta.clone(),
            jump_density: self.density.clone(),
            switching: self.switching.clone(),
            noise: self.noise.clone(),
            state_space: self.space.clone(),
            constants: self.consts,
        }
    }
}
