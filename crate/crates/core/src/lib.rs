//! Simulator and numerical diagnostics for piecewise deterministic Markov
//! processes: deterministic semiflows switched at Poisson jump times through
//! randomly perturbed jump maps.
//!
//! The crate simulates the embedded post-jump chain and the interpolated
//! continuous-time process, applies the associated Markov operators and
//! kernels numerically, couples two copies of the chain for contraction
//! diagnostics, and estimates the variance constants behind the central
//! limit theorem and the law of the iterated logarithm for additive path
//! functionals. Built-in gallery models with closed-form invariants anchor
//! every estimator to an exact value.

pub mod conditions;
pub mod config;
pub mod coupling;
pub mod error;
pub mod gallery;
pub mod lil;
pub mod measure;
pub mod model;
pub mod observable;
pub mod operators;
pub mod quad;
pub mod report;
pub mod sampler;
pub mod sim;
pub mod space;
pub mod stats;
pub mod transport;

pub use error::{Error, Result};
