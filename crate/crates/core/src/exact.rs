//! Exact ground truth for finite models: the value function by linear
//! algebra, and moments of the filtered estimator under any tilted kernel by
//! one-step-conditioning recursions and by brute-force path enumeration.
//!
//! These are the oracles every stochastic module is checked against, so they
//! deliberately use two independent routes wherever possible: direct solve
//! vs. truncated series for the value function, recursion vs. enumeration for
//! the moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::MarkovRewardModel;
use crate::tilt::TiltedModel;
use crate::value::ValueFunction;

/// Iterations used for spectral-radius estimation.
const POWER_ITERS: usize = 200;

/// Divergence threshold: a discounted kernel with spectral radius above
/// `1 - SPECTRAL_MARGIN` is rejected as (numerically) non-contractive.
const SPECTRAL_MARGIN: f64 = 1e-9;

/// Estimate the spectral radius of a nonnegative matrix by power iteration
/// with a unit shift (which makes the dominant eigenvalue simple even for
/// periodic chains) and a Rayleigh quotient readout.
pub(crate) fn power_radius(m: &DMatrix<f64>, iters: usize) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    let shifted = m + DMatrix::<f64>::identity(n, n);
    let mut v = DVector::<f64>::from_element(n, 1.0 / (n as f64).sqrt());
    let mut rayleigh = 0.0;
    for _ in 0..iters {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        rayleigh = v.dot(&w) / v.dot(&v);
        v = w / norm;
    }
    rayleigh - 1.0
}

/// Map from global state indices to transient-block indices.
struct TransientIndex {
    to_local: Vec<Option<usize>>,
    to_global: Vec<usize>,
}

impl TransientIndex {
    fn new(model: &MarkovRewardModel) -> Self {
        let mut to_local = vec![None; model.n_states()];
        let to_global: Vec<usize> = model.transient().to_vec();
        for (i, &x) in to_global.iter().enumerate() {
            to_local[x] = Some(i);
        }
        Self { to_local, to_global }
    }

    fn len(&self) -> usize {
        self.to_global.len()
    }
}

/// The discounted transient kernel `P_beta` restricted to `A`, and the
/// one-step reward vector `h` on `A`.
fn discounted_block(model: &MarkovRewardModel, idx: &TransientIndex) -> (DMatrix<f64>, DVector<f64>) {
    let na = idx.len();
    let mut kernel = DMatrix::<f64>::zeros(na, na);
    let mut h = DVector::<f64>::zeros(na);
    for (i, &x) in idx.to_global.iter().enumerate() {
        h[i] = model.one_step_reward(x);
        for (j, &y) in idx.to_global.iter().enumerate() {
            kernel[(i, j)] = model.beta(x, y) * model.p(x, y);
        }
    }
    (kernel, h)
}

fn to_value_function(
    model: &MarkovRewardModel,
    idx: &TransientIndex,
    v: &DVector<f64>,
) -> ValueFunction {
    ValueFunction::from_fn(model, |x| v[idx.to_local[x].expect("transient state")])
}

/// Solve for the exact expected discounted total reward from every transient
/// state: `(I - P_beta|A) u = h`.
///
/// Rejects models whose discounted transient kernel is not strictly
/// subcritical (the expectation diverges) and models with a transient state
/// of zero value (by convention such states belong in the absorbing set).
pub fn solve_mu(model: &MarkovRewardModel) -> Result<ValueFunction> {
    model.ensure_valid()?;
    let idx = TransientIndex::new(model);
    let (kernel, h) = discounted_block(model, &idx);

    let radius = power_radius(&kernel, POWER_ITERS);
    if radius >= 1.0 - SPECTRAL_MARGIN {
        return Err(Error::Assumption(format!(
            "value function diverges: discounted transient kernel has spectral radius {radius:.6}"
        )));
    }

    let na = idx.len();
    let system = DMatrix::<f64>::identity(na, na) - &kernel;
    let u = system
        .lu()
        .solve(&h)
        .ok_or_else(|| Error::Numerical("singular linear system for the value function".into()))?;

    let max = u.iter().cloned().fold(0.0, f64::max);
    for (i, &x) in idx.to_global.iter().enumerate() {
        if !(u[i] > 1e-14 * (1.0 + max)) {
            return Err(Error::InvalidModel(format!(
                "transient state {x} has zero expected reward; by convention it belongs in the absorbing set"
            )));
        }
    }
    Ok(to_value_function(model, &idx, &u))
}

/// Partial sums of the series `sum_{k=0..=n_terms} (P_beta|A)^k h`.
///
/// Monotone nondecreasing in `n_terms` and convergent to [`solve_mu`] for
/// subcritical kernels; an independent route to the same quantity.
pub fn truncated_series_mu(model: &MarkovRewardModel, n_terms: usize) -> Result<ValueFunction> {
    model.ensure_valid()?;
    let idx = TransientIndex::new(model);
    let (kernel, h) = discounted_block(model, &idx);
    let mut acc = h.clone();
    let mut term = h;
    for _ in 0..n_terms {
        term = &kernel * &term;
        acc += &term;
    }
    Ok(to_value_function(model, &idx, &acc))
}

/// Exact first and second moments of the filtered estimator under a tilt.
#[derive(Debug, Clone)]
pub struct ExactMoments {
    /// `E[Y_nu]` per start state; equals the exact value function for every
    /// admissible tilt (the unbiasedness identity).
    pub mean: ValueFunction,
    /// `E[Y_nu^2]` per start state, or `None` when the second-moment system
    /// is spectrally divergent (infinite variance under this tilt).
    pub second_moment: Option<ValueFunction>,
}

impl ExactMoments {
    /// Exact variance at `x`, when finite.
    pub fn variance(&self, x: usize) -> Option<f64> {
        self.second_moment
            .as_ref()
            .map(|m2| m2.get(x) - self.mean.get(x) * self.mean.get(x))
    }
}

/// Compute the exact moments of `Y_nu` under the tilted kernel `Q_nu` by
/// one-step conditioning.
///
/// Conditioning on the first transition `x -> y` gives, with
/// `a(x,y) = l_nu(x,y) beta(x,y)`,
///
/// ```text
/// Y_x  =  a(x,y) * (s(x,y) + Y_y 1{y in A})
/// ```
///
/// in distribution, which linearises into two systems over the transient
/// block: means `m = c1 + T1 m` with `T1 = Q a`, and raw second moments
/// `w = c2 + T2 w` with `T2 = Q a^2`. Both are solved by dense LU.
pub fn exact_moments(model: &MarkovRewardModel, nu: &ValueFunction) -> Result<ExactMoments> {
    let tilted = TiltedModel::build(model, nu)?;
    let idx = TransientIndex::new(model);
    let na = idx.len();

    let mut t1 = DMatrix::<f64>::zeros(na, na);
    let mut t2 = DMatrix::<f64>::zeros(na, na);
    let mut c1 = DVector::<f64>::zeros(na);
    for (i, &x) in idx.to_global.iter().enumerate() {
        for &(y, q) in tilted.support(x) {
            let a = tilted.step_weight(x, y);
            c1[i] += q * a * model.s(x, y);
            if let Some(j) = idx.to_local[y] {
                t1[(i, j)] += q * a;
                t2[(i, j)] += q * a * a;
            }
        }
    }

    let mean_system = DMatrix::<f64>::identity(na, na) - &t1;
    let m = mean_system
        .lu()
        .solve(&c1)
        .ok_or_else(|| Error::Numerical("singular mean system".into()))?;

    // Second moment: c2 folds in the squared reward and the cross term with
    // the known means.
    let mut c2 = DVector::<f64>::zeros(na);
    for (i, &x) in idx.to_global.iter().enumerate() {
        for &(y, q) in tilted.support(x) {
            let a = tilted.step_weight(x, y);
            let s = model.s(x, y);
            let my = idx.to_local[y].map_or(0.0, |j| m[j]);
            c2[i] += q * a * a * (s * s + 2.0 * s * my);
        }
    }

    let second_moment = if power_radius(&t2, POWER_ITERS) >= 1.0 - SPECTRAL_MARGIN {
        None
    } else {
        let second_system = DMatrix::<f64>::identity(na, na) - &t2;
        second_system
            .lu()
            .solve(&c2)
            .map(|w| to_value_function(model, &idx, &w))
    };

    Ok(ExactMoments {
        mean: to_value_function(model, &idx, &m),
        second_moment,
    })
}

/// Brute-force moments by exhaustive enumeration of tilted paths.
#[derive(Debug, Clone)]
pub struct BruteForceMoments {
    /// Probability-weighted estimator value per start state; censored paths
    /// contribute their partial sums.
    pub mean: ValueFunction,
    /// Probability-weighted squared estimator value per start state.
    pub second_moment: ValueFunction,
    /// Per start state, the probability mass not absorbed within the horizon.
    pub tail_mass: Vec<f64>,
}

/// Enumerate every tilted path of length at most `horizon` from each
/// transient start, an oracle wholly independent of the linear-algebra route.
///
/// The enumeration budget is guarded up front via the maximum branching
/// factor and during the walk by an expansion counter.
pub fn brute_force_moments(
    model: &MarkovRewardModel,
    nu: &ValueFunction,
    horizon: usize,
) -> Result<BruteForceMoments> {
    const BUDGET: f64 = 1e7;
    let tilted = TiltedModel::build(model, nu)?;

    // Only transitions into transient states multiply the live-path count;
    // absorbing transitions terminate their path immediately.
    let branching = model
        .transient()
        .iter()
        .map(|&x| {
            tilted
                .support(x)
                .iter()
                .filter(|(y, _)| !model.is_absorbing(*y))
                .count()
        })
        .max()
        .unwrap_or(0)
        .max(1);
    if (horizon as f64) * (branching as f64).ln() > BUDGET.ln() {
        return Err(Error::Budget(format!(
            "enumeration of transient branching {branching} to horizon {horizon} exceeds {BUDGET:e} paths"
        )));
    }

    let n = model.n_states();
    let mut mean = vec![0.0; n];
    let mut second = vec![0.0; n];
    let mut tail = vec![0.0; n];
    let mut expansions = 0_u64;

    // Iterative DFS; probabilities, discounts and ratios stay in linear space
    // (enumeration depths are budget-capped well inside f64 range).
    struct Frame {
        state: usize,
        depth: usize,
        prob: f64,
        discount: f64,
        ratio: f64,
        partial: f64,
    }

    for &start in model.transient() {
        if horizon == 0 {
            tail[start] = 1.0;
            continue;
        }
        let mut stack = vec![Frame {
            state: start,
            depth: 0,
            prob: 1.0,
            discount: 1.0,
            ratio: 1.0,
            partial: 0.0,
        }];
        while let Some(f) = stack.pop() {
            for &(y, q) in tilted.support(f.state) {
                expansions += 1;
                if expansions as f64 > 2.0 * BUDGET {
                    return Err(Error::Budget("enumeration expansion cap reached".into()));
                }
                let prob = f.prob * q;
                let discount = f.discount * model.beta(f.state, y);
                let ratio = f.ratio * tilted.likelihood_ratio(f.state, y);
                let partial = f.partial + model.s(f.state, y) * discount * ratio;
                if model.is_absorbing(y) {
                    mean[start] += prob * partial;
                    second[start] += prob * partial * partial;
                } else if f.depth + 1 == horizon {
                    tail[start] += prob;
                    mean[start] += prob * partial;
                    second[start] += prob * partial * partial;
                } else {
                    stack.push(Frame {
                        state: y,
                        depth: f.depth + 1,
                        prob,
                        discount,
                        ratio,
                        partial,
                    });
                }
            }
        }
    }

    Ok(BruteForceMoments {
        mean: ValueFunction::from_full(model, mean)?,
        second_moment: ValueFunction::from_full(model, second)?,
        tail_mass: tail,
    })
}
