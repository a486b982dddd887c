//! Finite absorbing Markov reward models and their structural constants.
//!
//! A model is a row-stochastic matrix `P` on states `0..n`, an absorbing set
//! `K`, a nonnegative reward `s(x,y)` and a strictly positive discount
//! `beta(x,y)` per transition. Rewards accumulate until the first entry into
//! `K`. The transient set `A` is the complement of `K` and must be nonempty
//! with `K` reachable from everywhere in it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::value::ValueFunction;

/// Row-sum tolerance for stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// A single violated invariant, referencing the offending JSON path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// JSON path into the model document, e.g. `P[1]` or `beta[1][2]`.
    pub path: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// Finite absorbing Markov reward model.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovRewardModel {
    n_states: usize,
    absorbing: Vec<usize>,
    transient: Vec<usize>,
    is_absorbing: Vec<bool>,
    p: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

/// On-disk JSON schema for a model.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    n_states: usize,
    absorbing: Vec<usize>,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    s: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
}

impl MarkovRewardModel {
    /// Build a model from its parts.
    ///
    /// Shape problems (dimension mismatches, out-of-range absorbing indices)
    /// are hard errors because the data cannot be indexed; semantic
    /// invariants are left to [`MarkovRewardModel::validate`].
    pub fn new(
        n_states: usize,
        absorbing: &[usize],
        p: Vec<Vec<f64>>,
        s: Vec<Vec<f64>>,
        beta: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if n_states == 0 {
            return Err(Error::InvalidModel("n_states must be positive".into()));
        }
        for (name, m) in [("P", &p), ("s", &s), ("beta", &beta)] {
            if m.len() != n_states || m.iter().any(|row| row.len() != n_states) {
                return Err(Error::InvalidModel(format!(
                    "{name} must be {n_states}x{n_states}"
                )));
            }
        }
        let mut is_absorbing = vec![false; n_states];
        for (i, &k) in absorbing.iter().enumerate() {
            if k >= n_states {
                return Err(Error::InvalidModel(format!(
                    "absorbing[{i}]: state {k} out of range"
                )));
            }
            if is_absorbing[k] {
                return Err(Error::InvalidModel(format!(
                    "absorbing[{i}]: state {k} listed twice"
                )));
            }
            is_absorbing[k] = true;
        }
        let mut absorbing: Vec<usize> = absorbing.to_vec();
        absorbing.sort_unstable();
        let transient = (0..n_states).filter(|&x| !is_absorbing[x]).collect();
        Ok(Self {
            n_states,
            absorbing,
            transient,
            is_absorbing,
            p,
            s,
            beta,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidModel(format!("model JSON: {e}")))?;
        Self::new(file.n_states, &file.absorbing, file.p, file.s, file.beta)
    }

    pub fn to_json_string(&self) -> String {
        let file = ModelFile {
            n_states: self.n_states,
            absorbing: self.absorbing.clone(),
            p: self.p.clone(),
            s: self.s.clone(),
            beta: self.beta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("model serialization cannot fail")
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn absorbing(&self) -> &[usize] {
        &self.absorbing
    }

    pub fn transient(&self) -> &[usize] {
        &self.transient
    }

    pub fn is_absorbing(&self, x: usize) -> bool {
        self.is_absorbing[x]
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.p[x][y]
    }

    pub fn s(&self, x: usize, y: usize) -> f64 {
        self.s[x][y]
    }

    pub fn beta(&self, x: usize, y: usize) -> f64 {
        self.beta[x][y]
    }

    /// `h(x) = sum_y beta(x,y) s(x,y) P(x,y)`, the one-step discounted reward.
    pub fn one_step_reward(&self, x: usize) -> f64 {
        (0..self.n_states)
            .map(|y| self.beta[x][y] * self.s[x][y] * self.p[x][y])
            .sum()
    }

    /// Check every semantic invariant; an empty list means the model is valid.
    ///
    /// Violations are data, not errors: callers decide whether to reject.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for x in 0..self.n_states {
            let mut row_sum = 0.0;
            for y in 0..self.n_states {
                let v = self.p[x][y];
                if !(0.0..=1.0 + ROW_SUM_TOL).contains(&v) || !v.is_finite() {
                    out.push(Violation {
                        path: format!("P[{x}][{y}]"),
                        message: format!("entry {v} not a probability"),
                    });
                }
                row_sum += v;
            }
            if (row_sum - 1.0).abs() > ROW_SUM_TOL {
                out.push(Violation {
                    path: format!("P[{x}]"),
                    message: format!("row not stochastic (sums to {row_sum})"),
                });
            }
        }
        for x in 0..self.n_states {
            for y in 0..self.n_states {
                let sv = self.s[x][y];
                if !sv.is_finite() || sv < 0.0 {
                    out.push(Violation {
                        path: format!("s[{x}][{y}]"),
                        message: format!("reward {sv} negative or not finite"),
                    });
                }
                if self.is_absorbing[x] && sv != 0.0 {
                    out.push(Violation {
                        path: format!("s[{x}][{y}]"),
                        message: "reward must be zero on absorbing rows".into(),
                    });
                }
                let bv = self.beta[x][y];
                if !bv.is_finite() || bv <= 0.0 {
                    out.push(Violation {
                        path: format!("beta[{x}][{y}]"),
                        message: format!("beta not strictly positive ({bv})"),
                    });
                }
            }
        }
        if self.transient.is_empty() {
            out.push(Violation {
                path: "absorbing".into(),
                message: "no transient states (A is empty)".into(),
            });
        }
        if self.absorbing.is_empty() {
            out.push(Violation {
                path: "absorbing".into(),
                message: "absorbing set is empty".into(),
            });
        } else {
            for &x in self.unreachable_transient().iter() {
                out.push(Violation {
                    path: format!("P[{x}]"),
                    message: "absorbing set unreachable from this transient state".into(),
                });
            }
        }
        out
    }

    /// Transient states from which `K` cannot be reached through `P`'s support.
    fn unreachable_transient(&self) -> Vec<usize> {
        // Backward BFS from K over the reversed support graph.
        let mut reaches = self.is_absorbing.clone();
        let mut frontier: Vec<usize> = self.absorbing.clone();
        while let Some(y) = frontier.pop() {
            for x in 0..self.n_states {
                if !reaches[x] && self.p[x][y] > 0.0 {
                    reaches[x] = true;
                    frontier.push(x);
                }
            }
        }
        self.transient
            .iter()
            .copied()
            .filter(|&x| !reaches[x])
            .collect()
    }

    /// Error out unless the model is valid.
    pub fn ensure_valid(&self) -> Result<()> {
        let violations = self.validate();
        if violations.is_empty() {
            Ok(())
        } else {
            let text: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidModel(text.join("; ")))
        }
    }

    /// One backward step of the truncated-absorption-reward recursion:
    /// `v'(x) = sum_{y in K} P(x,y) s(x,y) + sum_{y in A} P(x,y) v(y)`.
    fn absorption_reward_step(&self, v: &[f64]) -> Vec<f64> {
        let mut next = vec![0.0_f64; self.n_states];
        for &x in &self.transient {
            let mut acc = 0.0;
            for y in 0..self.n_states {
                let pxy = self.p[x][y];
                if pxy == 0.0 {
                    continue;
                }
                if self.is_absorbing[y] {
                    acc += pxy * self.s[x][y];
                } else {
                    acc += pxy * v[y];
                }
            }
            next[x] = acc;
        }
        next
    }

    fn min_transient_of(&self, v: &[f64]) -> f64 {
        self.transient
            .iter()
            .map(|&x| v[x])
            .fold(f64::INFINITY, f64::min)
    }

    /// Minimum over transient starts of the expected terminal reward collected
    /// on absorption within `m` steps, computed exactly by backward dynamic
    /// programming.
    ///
    /// A strictly positive value certifies the finite-horizon absorption
    /// property the simulation estimators rely on; a state that cannot reach
    /// the absorbing set pins the value at zero for every horizon.
    pub fn dp_gamma(&self, m: usize) -> Result<f64> {
        if m == 0 {
            return Err(Error::Domain("horizon m must be at least 1".into()));
        }
        // v_k(x) = E_x[ s(X_{tau-1}, X_tau); tau <= k ] for x transient.
        let mut v = vec![0.0_f64; self.n_states];
        for _ in 0..m {
            v = self.absorption_reward_step(&v);
        }
        Ok(self.min_transient_of(&v))
    }
}

/// Structural constants of a validated model with respect to a tilting box.
///
/// All bounds hold uniformly over tilting functions inside
/// `[box_min, box_max]`, which must contain the exact value function.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StructuralConstants {
    /// Supremum of `s` over transient rows.
    pub reward_sup: f64,
    /// Supremum of `beta` over transient rows.
    pub beta_sup: f64,
    /// Infimum of `beta` over transient rows.
    pub beta_inf: f64,
    /// Minimum of the exact value function over transient states.
    pub value_min: f64,
    /// Maximum of the exact value function over transient states.
    pub value_max: f64,
    /// Lower edge of the tilting box (positive, at most `value_min`).
    pub box_min: f64,
    /// Upper edge of the tilting box (at least `value_max`).
    pub box_max: f64,
    /// Smallest horizon with a positive worst-case absorption reward.
    pub horizon: usize,
    /// The worst-case absorption reward at that horizon.
    pub horizon_reward: f64,
    /// Per-step base of the lower bound `lr_lower^n (* terminal reward)` on
    /// the inverse likelihood ratio; always in (0, 1).
    pub lr_lower: f64,
    /// Per-step base of the upper bound `lr_upper^n` on the inverse
    /// likelihood ratio; at least 1.
    pub lr_upper: f64,
    /// Parameter of the geometric distribution dominating the absorption time
    /// under every tilt in the box; in (0, 1].
    pub geo_rate: f64,
}

impl StructuralConstants {
    /// Simulation step cap that makes censoring exponentially unlikely.
    pub fn default_max_steps(&self) -> usize {
        (50.0 / self.geo_rate).ceil() as usize
    }
}

/// Compute the structural constants for `model` with exact value function
/// `mu` and tilting box `[box_min, box_max]`.
///
/// Searches horizons `1..=m_max` (default `10 * n_states`) for the smallest
/// one at which the worst-case absorption reward is positive; a model with
/// none is rejected.
pub fn compute_constants(
    model: &MarkovRewardModel,
    mu: &ValueFunction,
    box_min: f64,
    box_max: f64,
    m_max: Option<usize>,
) -> Result<StructuralConstants> {
    model.ensure_valid()?;
    let value_min = mu.min_transient(model);
    let value_max = mu.max_transient(model);
    if !(box_min > 0.0) {
        return Err(Error::Domain("box_min must be strictly positive".into()));
    }
    if box_min > value_min * (1.0 + 1e-12) || box_max < value_max * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "tilting box [{box_min}, {box_max}] must contain the value range [{value_min}, {value_max}]"
        )));
    }

    let mut reward_sup: f64 = 0.0;
    let mut beta_sup = f64::NEG_INFINITY;
    let mut beta_inf = f64::INFINITY;
    for &x in model.transient() {
        for y in 0..model.n_states() {
            reward_sup = reward_sup.max(model.s(x, y));
            beta_sup = beta_sup.max(model.beta(x, y));
            beta_inf = beta_inf.min(model.beta(x, y));
        }
    }

    let m_max = m_max.unwrap_or(10 * model.n_states());
    let mut found = None;
    let mut v = vec![0.0_f64; model.n_states()];
    for m in 1..=m_max {
        v = model.absorption_reward_step(&v);
        let gamma = model.min_transient_of(&v);
        if gamma > 0.0 {
            found = Some((m, gamma));
            break;
        }
    }
    let (horizon, horizon_reward) = found.ok_or_else(|| {
        Error::Assumption(format!(
            "no horizon up to {m_max} gives a positive worst-case absorption reward"
        ))
    })?;

    // Per-step bound on the inverse likelihood ratio: each sampled transition
    // into A contributes at least beta_inf * box_min / ((reward_sup + box_max)
    // * beta_sup), each terminal transition the same with box_min replaced by
    // the terminal reward. Folding min(box_min, 1) into the base keeps the
    // n-step product bound valid with the terminal reward as a single factor.
    let lr_lower = (beta_inf * box_min.min(1.0) / ((reward_sup + box_max) * beta_sup))
        .min(1.0 - 1e-12);
    if !(lr_lower > 0.0) {
        return Err(Error::Numerical(
            "degenerate likelihood-ratio lower bound".into(),
        ));
    }
    // Upper bound via the normalizer floor box_min * value_min / value_max;
    // clipped below at 1 so the n-step form lr_upper^n covers the empty
    // product as well.
    let lr_upper =
        ((reward_sup + box_max) * beta_sup * value_max / (box_min * value_min)).max(1.0);

    let geo_rate = 1.0 - (1.0 - lr_lower.powi(horizon as i32) * horizon_reward).powf(1.0 / horizon as f64);

    Ok(StructuralConstants {
        reward_sup,
        beta_sup,
        beta_inf,
        value_min,
        value_max,
        box_min,
        box_max,
        horizon,
        horizon_reward,
        lr_lower,
        lr_upper,
        geo_rate,
    })
}

/// Canonical small models used by tests, docs and the calibration runs.
pub mod fixtures {
    use super::MarkovRewardModel;
    use crate::streams::derive_rng;
    use rand::Rng;

    /// Three states, one absorbing: `K = {0}`, the two transient states each
    /// move to the other or absorb with probability 1/2, unit rewards on
    /// transient rows, no discounting. Exact value function: (2, 2).
    pub fn two_state() -> MarkovRewardModel {
        let p = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.5, 0.0, 0.5],
            vec![0.5, 0.5, 0.0],
        ];
        let s = vec![
            vec![0.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![1.0, 1.0, 1.0],
        ];
        let beta = vec![vec![1.0; 3]; 3];
        MarkovRewardModel::new(3, &[0], p, s, beta).expect("fixture is well formed")
    }

    /// Seeded random model with `n_transient` transient states and one
    /// absorbing state 0.
    ///
    /// Every transient row keeps at least 5% direct absorption mass with a
    /// reward of at least 0.1 on that transition, so absorption certificates
    /// exist at horizon 1. Discounts stay in [0.7, 1.0], keeping the
    /// discounted kernel strictly subcritical.
    pub fn random_model(seed: u64, n_transient: usize) -> MarkovRewardModel {
        assert!(n_transient >= 1);
        let n = n_transient + 1;
        let mut rng = derive_rng(seed, &[0x6d6f64656c]);
        let mut p = vec![vec![0.0_f64; n]; n];
        let mut s = vec![vec![0.0_f64; n]; n];
        let mut beta = vec![vec![1.0_f64; n]; n];
        p[0][0] = 1.0;
        for x in 1..n {
            let mut weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
            let total: f64 = weights.iter().sum();
            for w in weights.iter_mut() {
                *w /= total;
            }
            // Reserve direct absorption mass.
            let absorb = 0.05 + 0.45 * rng.gen::<f64>();
            let rest: f64 = weights[1..].iter().sum();
            p[x][0] = absorb;
            for y in 1..n {
                p[x][y] = weights[y] / rest * (1.0 - absorb);
            }
            for y in 0..n {
                s[x][y] = rng.gen_range(0.0..2.0);
                beta[x][y] = rng.gen_range(0.7..1.0);
            }
            s[x][0] = s[x][0].max(0.1);
        }
        MarkovRewardModel::new(n, &[0], p, s, beta).expect("generated model is well formed")
    }
}
