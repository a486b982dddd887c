//! Value functions over the transient states of a model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::MarkovRewardModel;

/// A candidate value function: one real per state, zero on absorbing states.
///
/// Used both for the exact solution `mu` and for tilting candidates `nu`.
/// A tilting candidate must be strictly positive on transient states; entries
/// on absorbing states are kept at exactly zero by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    /// Wrap a full-length vector (one entry per state). Entries at absorbing
    /// states are forced to zero.
    pub fn from_full(model: &MarkovRewardModel, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != model.n_states() {
            return Err(Error::Domain(format!(
                "value vector has length {}, model has {} states",
                values.len(),
                model.n_states()
            )));
        }
        for k in model.absorbing() {
            values[*k] = 0.0;
        }
        Ok(Self { values })
    }

    /// Build from per-transient-state values, given in ascending state order.
    pub fn from_transient(model: &MarkovRewardModel, values: &[f64]) -> Result<Self> {
        if values.len() != model.transient().len() {
            return Err(Error::Domain(format!(
                "got {} values for {} transient states",
                values.len(),
                model.transient().len()
            )));
        }
        let mut full = vec![0.0; model.n_states()];
        for (&x, &v) in model.transient().iter().zip(values) {
            full[x] = v;
        }
        Ok(Self { values: full })
    }

    /// Per-transient-state values in ascending state order.
    pub fn transient_values(&self, model: &MarkovRewardModel) -> Vec<f64> {
        model.transient().iter().map(|&x| self.values[x]).collect()
    }

    /// Constant value on every transient state.
    pub fn constant(model: &MarkovRewardModel, c: f64) -> Self {
        let mut values = vec![0.0; model.n_states()];
        for x in model.transient() {
            values[*x] = c;
        }
        Self { values }
    }

    /// Build from a function of the transient state index.
    pub fn from_fn(model: &MarkovRewardModel, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut values = vec![0.0; model.n_states()];
        for x in model.transient() {
            values[*x] = f(*x);
        }
        Self { values }
    }

    pub fn get(&self, x: usize) -> f64 {
        self.values[x]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// True when strictly positive on every transient state, as a tilting
    /// candidate must be.
    pub fn is_positive_on_transient(&self, model: &MarkovRewardModel) -> bool {
        model.transient().iter().all(|&x| self.values[x] > 0.0)
    }

    /// Sup-norm distance over transient states.
    pub fn sup_diff(&self, other: &ValueFunction, model: &MarkovRewardModel) -> f64 {
        model
            .transient()
            .iter()
            .map(|&x| (self.values[x] - other.values[x]).abs())
            .fold(0.0, f64::max)
    }

    /// Minimum over transient states.
    pub fn min_transient(&self, model: &MarkovRewardModel) -> f64 {
        model
            .transient()
            .iter()
            .map(|&x| self.values[x])
            .fold(f64::INFINITY, f64::min)
    }

    /// Maximum over transient states.
    pub fn max_transient(&self, model: &MarkovRewardModel) -> f64 {
        model
            .transient()
            .iter()
            .map(|&x| self.values[x])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Pointwise clamp into `[lo, hi]` on transient states.
    pub fn clamped(&self, model: &MarkovRewardModel, lo: f64, hi: f64) -> ValueFunction {
        let mut values = self.values.clone();
        for &x in model.transient() {
            values[x] = values[x].clamp(lo, hi);
        }
        ValueFunction { values }
    }

    /// Pointwise shift by `t * direction` on transient states.
    pub fn shifted(&self, model: &MarkovRewardModel, direction: &[f64], t: f64) -> ValueFunction {
        let mut values = self.values.clone();
        for &x in model.transient() {
            values[x] += t * direction[x];
        }
        ValueFunction { values }
    }
}
