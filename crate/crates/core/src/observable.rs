//! Bounded Lipschitz observables on the hybrid space, with declared sup and
//! Lipschitz bounds (w.r.t. the hybrid metric) derived from the model's box.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, StateSpace};
use crate::space::HybridState;

#[derive(Debug, Clone, PartialEq)]
pub enum ObservableKind {
    /// g((y, i)) = a . y + b, index-blind.
    AffineY { a: Vec<f64>, b: f64 },
    /// g((y, i)) = cos(freq * y_0).
    CosY { freq: f64 },
    /// g((y, i)) = exp(-y_0).
    ExpNegY,
    /// g((y, i)) = 1 if i equals `index`, else 0.
    IndexIs { index: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    pub name: String,
    pub kind: ObservableKind,
    /// Declared bound on |g|.
    pub sup_bound: f64,
    /// Declared Lipschitz constant w.r.t. the hybrid metric.
    pub lip_bound: f64,
}

impl Observable {
    pub fn eval(&self, x: &HybridState) -> f64 {
        match &self.kind {
            ObservableKind::AffineY { a, b } => {
                a.iter().zip(x.y.iter()).map(|(ak, yk)| ak * yk).sum::<f64>() + b
            }
            ObservableKind::CosY { freq } => (freq * x.y[0]).cos(),
            ObservableKind::ExpNegY => (-x.y[0]).exp(),
            ObservableKind::IndexIs { index } => {
                if x.i == *index {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Coefficients (a, b) when g is affine in y; the closed-form fast path
    /// for path integrals and flow averages.
    pub fn affine_parts(&self) -> Option<(&[f64], f64)> {
        match &self.kind {
            ObservableKind::AffineY { a, b } => Some((a, *b)),
            _ => None,
        }
    }

    /// Exact scalar multiple, where the family is closed under scaling.
    pub fn try_scaled(&self, factor: f64) -> Option<Observable> {
        match &self.kind {
            ObservableKind::AffineY { a, b } => Some(Observable {
                name: format!("{}x{}", self.name, factor),
                kind: ObservableKind::AffineY {
                    a: a.iter().map(|v| factor * v).collect(),
                    b: factor * b,
                },
                sup_bound: factor.abs() * self.sup_bound,
                lip_bound: factor.abs() * self.lip_bound,
            }),
            _ => None,
        }
    }
}

/// Look up one of the registered observables, with bounds computed from the
/// model's box and metric weight.
pub fn standard_observable(name: &str, model: &ModelSpec) -> Result<Observable> {
    let (lo, hi) = match &model.space {
        StateSpace::Box { lo, hi } => (lo.clone(), hi.clone()),
        StateSpace::All { .. } => {
            return Err(Error::InvalidConfig(
                "registered observables need a bounded state space for their sup bounds".into(),
            ))
        }
    };
    let ob = match name {
        "y" => {
            let mut a = vec![0.0; model.dim];
            a[0] = 1.0;
            Observable {
                name: name.into(),
                kind: ObservableKind::AffineY { a, b: 0.0 },
                sup_bound: lo[0].abs().max(hi[0].abs()),
                lip_bound: 1.0,
            }
        }
        "cosy" => Observable {
            name: name.into(),
            kind: ObservableKind::CosY { freq: 1.0 },
            sup_bound: 1.0,
            lip_bound: 1.0,
        },
        "expny" => Observable {
            name: name.into(),
            kind: ObservableKind::ExpNegY,
            sup_bound: (-lo[0]).exp(),
            lip_bound: (-lo[0]).exp(),
        },
        "idx1" => Observable {
            name: name.into(),
            kind: ObservableKind::IndexIs { index: 1 },
            sup_bound: 1.0,
            lip_bound: 1.0 / model.c,
        },
        other => return Err(Error::UnknownObservable(other.into())),
    };
    Ok(ob)
}

pub const OBSERVABLE_NAMES: [&str; 4] = ["y", "cosy", "expny", "idx1"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::load_gallery;
    use crate::sampler::SeedStream;
    use crate::space::{rho_c, svec};
    use rand::Rng;

    #[test]
    fn declared_bounds_hold_on_random_probes() {
        let m = load_gallery("two-flow-switch").unwrap().spec;
        let mut rng = SeedStream::new(17).rng(0);
        for name in OBSERVABLE_NAMES {
            let g = standard_observable(name, &m).unwrap();
            let mut probe = || {
                let y = svec(&[rng.gen::<f64>() * 12.0]);
                let i = 1 + (rng.gen::<f64>() < 0.5) as usize;
                HybridState::new(y, i)
            };
            for _ in 0..500 {
                let x1 = probe();
                let x2 = probe();
                assert!(g.eval(&x1).abs() <= g.sup_bound + 1e-12, "{name}");
                let gap = (g.eval(&x1) - g.eval(&x2)).abs();
                assert!(
                    gap <= g.lip_bound * rho_c(&x1, &x2, m.c) + 1e-12,
                    "{name}"
                );
            }
        }
    }

    #[test]
    fn unknown_name_is_rejected() {
        let m = load_gallery("relaxation").unwrap().spec;
        assert!(matches!(
            standard_observable("zeta", &m).unwrap_err(),
            Error::UnknownObservable(_)
        ));
    }

    #[test]
    fn scaling_is_exact_for_affine() {
        let m = load_gallery("relaxation").unwrap().spec;
        let g = standard_observable("y", &m).unwrap();
        let g2 = g.try_scaled(2.0).unwrap();
        let x = HybridState::new(svec(&[3.3]), 1);
        assert_eq!(g2.eval(&x), 2.0 * g.eval(&x));
        assert!(standard_observable("cosy", &m)
            .unwrap()
            .try_scaled(2.0)
            .is_none());
    }
}
