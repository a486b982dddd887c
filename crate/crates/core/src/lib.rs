//! Adaptive importance sampling for Markov reward expectations.
//!
//! The library centers on finite absorbing Markov reward models: a chain on
//! states `0..n` with an absorbing set `K`, per-transition rewards `s(x,y)`
//! and discounts `beta(x,y)`. The quantity of interest is the expected
//! discounted total reward `mu(x)` collected before absorption.
//!
//! Everything is organised around one idea: tilting the chain by a positive
//! candidate value function `nu` yields an importance sampling measure whose
//! filtered estimator is unbiased for `mu`, and the tilt by `mu` itself has
//! zero variance. Iterating "simulate under the current tilt, refit the value
//! function" therefore converges to the zero-variance point at an exponential
//! rate, which the [`adaptive`] module measures empirically against the exact
//! linear-algebra solution from [`exact`].
//!
//! Modules:
//! - [`model`]: model definition, validation, structural constants
//! - [`exact`]: exact solver and moment oracles (linear algebra + enumeration)
//! - [`tilt`]: tilted kernels, trajectory simulation, Monte Carlo estimates
//! - [`adaptive`]: the iterative algorithm, rate and contraction diagnostics
//! - [`eigen`]: Perron-Frobenius eigenvalue estimation by regenerative tilting
//! - [`halving`]: the halving-chain counterexample experiments
//! - [`streams`]: deterministic, hierarchical RNG stream derivation

pub mod adaptive;
pub mod eigen;
pub mod error;
pub mod exact;
pub mod halving;
pub mod model;
pub mod streams;
pub mod tilt;
pub mod value;

pub use error::{Error, Result};
pub use model::{MarkovRewardModel, StructuralConstants, Violation};
pub use value::ValueFunction;
