//! Built-in model instances with closed-form oracle values.
//!
//! These are the ground-truth layer of the test suite: every invariant
//! moment listed here is an exact fraction derived from the fixed-point
//! equations of the corresponding chain, and the numeric machinery is tested
//! against them rather than against itself.

use crate::config::{build_model, Dynamics, ModelConfig};
use crate::error::{Error, Result};
use crate::model::{
    Constants, Flow, JumpDensity, JumpMap, ModelSpec, Noise, StateSpace, Switching, ThetaSpace,
};

/// Exact invariant-law values for the observable g((y, i)) = y, where the
/// model admits them. `None` means no closed form is known for that entry.
#[derive(Debug, Clone, Copy)]
pub struct Oracle {
    /// E[Y] under the invariant law of the embedded (post-jump) chain.
    pub embedded_mean_y: Option<f64>,
    /// E[Y^2] under the same law.
    pub embedded_second_moment_y: Option<f64>,
    /// Mean of y under the continuous-time invariant law.
    pub continuous_mean_y: Option<f64>,
    /// E[Z_1^2] from a stationary start, g = y centered.
    pub sigma_tilde_sq: Option<f64>,
    /// Long-run variance of the centered flow-averaged observable along the
    /// embedded chain.
    pub sigma_embedded_sq: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GalleryModel {
    pub spec: ModelSpec,
    pub oracle: Oracle,
}

pub const GALLERY_NAMES: [&str; 3] = ["relaxation", "two-flow-switch", "iid-jump"];

fn shared_constants() -> Constants {
    Constants {
        flow_lipschitz: 1.0,
        // true decay rate is 1; declared slightly above so stability margins
        // stay strictly positive at finite probes
        flow_growth: -0.95,
        flow_gap: 1.0,
        // covers both the cubed moment factor 0.125 and the first-power
        // radius 0.5 of the overlap parameter set
        jump_contraction: 0.55,
        switch_lipschitz: 0.5,
        density_lipschitz: 0.5,
        switch_overlap: 0.5,
        density_overlap: 0.5,
    }
}

/// Single flow relaxing to 0; jump y -> (y + theta)/2 + 0.2 with uniform
/// theta and uniform noise on (-0.1, 0.1). Everything about the invariant
/// law of g = y is solvable by hand.
fn relaxation_config() -> ModelConfig {
    ModelConfig {
        name: "relaxation".into(),
        dynamics: Dynamics {
            jump_rate: 1.0,
            moment_exponent: 1.0,
            metric_weight: 1.0,
            reference_point: vec![0.6],
        },
        flow: vec![Flow::Relaxation {
            target: vec![0.0],
            rate: 1.0,
        }],
        jump_map: JumpMap::Affine {
            scale_y: 0.5,
            dir: vec![0.5],
            offset: vec![0.2],
        },
        theta: ThetaSpace::Interval { lo: 0.0, hi: 1.0 },
        jump_density: JumpDensity::Uniform,
        switching: Switching::Constant {
            rows: vec![vec![1.0]],
        },
        noise: Noise::UniformBall { eps: 0.1 },
        state_space: StateSpace::Box {
            lo: vec![0.0],
            hi: vec![12.0],
        },
        constants: shared_constants(),
    }
}

/// Two flows relaxing to 0 and 1, tanh-switched, with a state-tilted jump
/// density and truncated-Gaussian noise. The fully state-coupled instance;
/// no closed-form invariants.
fn two_flow_switch_config() -> ModelConfig {
    ModelConfig {
        name: "two-flow-switch".into(),
        dynamics: Dynamics {
            jump_rate: 2.0,
            moment_exponent: 1.0,
            metric_weight: 2.0,
            reference_point: vec![1.0],
        },
        flow: vec![
            Flow::Relaxation {
                target: vec![0.0],
                rate: 1.0,
            },
            Flow::Relaxation {
                target: vec![1.0],
                rate: 1.0,
            },
        ],
        jump_map: JumpMap::Affine {
            scale_y: 0.5,
            dir: vec![0.5],
            offset: vec![0.2],
        },
        theta: ThetaSpace::Interval { lo: 0.0, hi: 1.0 },
        jump_density: JumpDensity::StateTilted {
            gain: 0.3,
            center: 1.0,
        },
        switching: Switching::Tanh2 {
            stay: 0.7,
            swing: 0.15,
            center: 1.0,
        },
        noise: Noise::TruncGauss { sd: 0.05, eps: 0.1 },
        state_space: StateSpace::Box {
            lo: vec![0.0],
            hi: vec![12.0],
        },
        constants: Constants {
            switch_overlap: 0.2,
            density_overlap: 0.7,
            ..shared_constants()
        },
    }
}

/// Jump map ignores the current state entirely, so post-jump states are
/// independent U[0, 1] draws and the embedded invariant law is known exactly.
fn iid_jump_config() -> ModelConfig {
    ModelConfig {
        name: "iid-jump".into(),
        dynamics: Dynamics {
            jump_rate: 1.0,
            moment_exponent: 1.0,
            metric_weight: 1.0,
            reference_point: vec![0.5],
        },
        flow: vec![Flow::Relaxation {
            target: vec![0.0],
            rate: 1.0,
        }],
        jump_map: JumpMap::Affine {
            scale_y: 0.0,
            dir: vec![1.0],
            offset: vec![0.0],
        },
        theta: ThetaSpace::Interval { lo: 0.0, hi: 1.0 },
        jump_density: JumpDensity::Uniform,
        switching: Switching::Constant {
            rows: vec![vec![1.0]],
        },
        noise: Noise::None,
        state_space: StateSpace::Box {
            lo: vec![0.0],
            hi: vec![1.0],
        },
        constants: shared_constants(),
    }
}

/// Load a built-in model by name.
pub fn load_gallery(name: &str) -> Result<GalleryModel> {
    let (cfg, oracle) = match name {
        // Invariant moments solve the fixed-point equations of the affine
        // recursion Y' = 0.5 e^{-T} Y + 0.5 theta + 0.2 + H at rate 1:
        //   m = m/4 + 0.45          => m = 3/5
        //   v = v/12 + 217/600      => v = 217/550
        "relaxation" => (
            relaxation_config(),
            Oracle {
                embedded_mean_y: Some(3.0 / 5.0),
                embedded_second_moment_y: Some(217.0 / 550.0),
                continuous_mean_y: Some(3.0 / 10.0),
                sigma_tilde_sq: Some(217.0 / 6600.0),
                // linear h: autocovariances decay by E[0.5 e^{-T}] = 1/4 per
                // lag, so the series sums to gamma_0 (1 + 2/3) with
                // gamma_0 = Var(Y)/4 = 19/2200
                sigma_embedded_sq: Some(19.0 / 1320.0),
            },
        ),
        "two-flow-switch" => (
            two_flow_switch_config(),
            Oracle {
                embedded_mean_y: None,
                embedded_second_moment_y: None,
                continuous_mean_y: None,
                sigma_tilde_sq: None,
                sigma_embedded_sq: None,
            },
        ),
        // Post-jump states are iid U[0,1]; the flow-averaged observable is
        // y/2 - 1/4, so the chain variance telescopes to Var(y/2) = 1/48.
        "iid-jump" => (
            iid_jump_config(),
            Oracle {
                embedded_mean_y: Some(0.5),
                embedded_second_moment_y: Some(1.0 / 3.0),
                continuous_mean_y: Some(0.25),
                sigma_tilde_sq: Some(1.0 / 36.0),
                sigma_embedded_sq: Some(1.0 / 48.0),
            },
        ),
        other => return Err(Error::UnknownGalleryName(other.into())),
    };
    Ok(GalleryModel {
        spec: build_model(&cfg)?,
        oracle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    #[test]
    fn all_names_load_and_unknown_is_rejected() {
        for name in GALLERY_NAMES {
            let g = load_gallery(name).unwrap();
            assert_eq!(g.spec.name, name);
            assert!(g.spec.balance_lhs() < 1.0);
        }
        assert!(matches!(
            load_gallery("nope").unwrap_err(),
            Error::UnknownGalleryName(_)
        ));
    }

    #[test]
    fn gallery_configs_round_trip_through_toml() {
        for name in GALLERY_NAMES {
            let g = load_gallery(name).unwrap();
            let text = g.spec.to_config().to_toml().unwrap();
            let back = ModelConfig::from_toml(&text).unwrap();
            let rebuilt = crate::config::build_model(&back).unwrap();
            assert_eq!(rebuilt.hash, g.spec.hash, "{name}");
        }
    }

    #[test]
    fn relaxation_flow_average_closed_form() {
        let g = load_gallery("relaxation").unwrap();
        let avg = g.spec.flow(1).exp_average(1.0, &crate::space::svec(&[4.0]));
        assert!((avg[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hashes_are_stable_and_distinct() {
        let h1 = load_gallery("relaxation").unwrap().spec.hash;
        let h2 = load_gallery("relaxation").unwrap().spec.hash;
        let h3 = load_gallery("iid-jump").unwrap().spec.hash;
        assert_eq!(h1, h2);
        assert_ne!(h1, h3);
        assert_eq!(h1.len(), 64);
    }
}
