//! Perron-Frobenius eigenvalue estimation by adaptive regenerative tilting.
//!
//! A nonnegative irreducible substochastic matrix `P` on states `0..=d`
//! (row defects feed an implicit cemetery) defines return cycles through the
//! distinguished state 0. Scaling path length `n` by `e^{alpha n}` makes the
//! expected weighted return indicator equal 1 exactly at
//! `alpha* = -log lambda_pf`, with the eigenvector as the associated value
//! function. The adaptive scheme alternates a root-finding update for
//! `alpha` with tilted estimation of the eigenvector, mirroring the general
//! algorithm but with a kernel that is entirely free of `alpha`:
//!
//! ```text
//! Q_nu(x, y) = (1{y=0} + nu(y)) P(x, y) / g(x),
//! g(x)       = P(x, 0) + sum_{y>=1} P(x, y) nu(y).
//! ```
//!
//! Because the kernel does not depend on `alpha`, one batch of return samples
//! `(tau, log L)` re-evaluates the estimated curve at every `alpha` during
//! the root search.

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::power_radius;
use crate::streams::{derive_rng, derive_seed};

const EIGEN_TAG: u64 = 0x65696765;

/// Residual multiplier allowed on the oracle eigen-identity.
const ORACLE_RESIDUAL_FACTOR: f64 = 10.0;

/// A substochastic, irreducible matrix with distinguished return state 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenModel {
    d: usize,
    p: Vec<Vec<f64>>,
}

impl EigenModel {
    /// Validate and wrap a `(d+1) x (d+1)` substochastic matrix.
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let n = p.len();
        if n == 0 || p.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidModel("matrix must be square and nonempty".into()));
        }
        for (x, row) in p.iter().enumerate() {
            let mut sum = 0.0;
            for (y, &v) in row.iter().enumerate() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidModel(format!(
                        "P[{x}][{y}] = {v} must be a finite nonnegative real"
                    )));
                }
                sum += v;
            }
            if sum > 1.0 + 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "P[{x}] sums to {sum}, above 1"
                )));
            }
        }
        let model = Self { d: n - 1, p };
        if !model.is_irreducible() {
            return Err(Error::InvalidModel("matrix is reducible".into()));
        }
        if model.d > 0 {
            // The principal submatrix without the return state must be
            // strictly subdominant, otherwise return cycles cannot carry the
            // full spectral information.
            let full = model.dense();
            let sub = full.view((1, 1), (model.d, model.d)).into_owned();
            let radius_full = power_radius(&full, 400);
            let radius_sub = power_radius(&sub, 400);
            if radius_sub >= radius_full {
                return Err(Error::InvalidModel(format!(
                    "submatrix without the return state has spectral radius {radius_sub:.6} >= {radius_full:.6}"
                )));
            }
        }
        Ok(model)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct EigenFile {
            d: usize,
            #[serde(rename = "P")]
            p: Vec<Vec<f64>>,
        }
        let file: EigenFile = serde_json::from_str(text)
            .map_err(|e| Error::InvalidModel(format!("eigen model JSON: {e}")))?;
        if file.p.len() != file.d + 1 {
            return Err(Error::InvalidModel(format!(
                "P has {} rows, expected d + 1 = {}",
                file.p.len(),
                file.d + 1
            )));
        }
        Self::new(file.p)
    }

    /// Number of non-return transient labels; states are `0..=d`.
    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n_states(&self) -> usize {
        self.d + 1
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.p[x][y]
    }

    fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.d + 1, self.d + 1, |i, j| self.p[i][j])
    }

    fn is_irreducible(&self) -> bool {
        let n = self.d + 1;
        let reachable = |forward: bool| -> usize {
            let mut seen = vec![false; n];
            let mut frontier = vec![0usize];
            seen[0] = true;
            let mut count = 1;
            while let Some(x) = frontier.pop() {
                for y in 0..n {
                    let edge = if forward { self.p[x][y] } else { self.p[y][x] };
                    if edge > 0.0 && !seen[y] {
                        seen[y] = true;
                        count += 1;
                        frontier.push(y);
                    }
                }
            }
            count
        };
        reachable(true) == n && reachable(false) == n
    }

    /// Default cap on the exponent: `-log(spectral radius without the return
    /// state)` minus a small margin, which keeps the weighted returns
    /// integrable. Unbounded for `d = 0`.
    pub fn default_alpha_max(&self) -> f64 {
        if self.d == 0 {
            return f64::INFINITY;
        }
        let full = self.dense();
        let sub = full.view((1, 1), (self.d, self.d)).into_owned();
        -power_radius(&sub, 400).ln() - 1e-3
    }
}

/// Exact eigen-data from power iteration.
#[derive(Debug, Clone)]
pub struct EigenOracle {
    pub lambda_pf: f64,
    /// `-log(lambda_pf)`.
    pub alpha_star: f64,
    /// Eigenvector normalized so component 0 equals 1.
    pub mu_star: Vec<f64>,
}

/// Power iteration (with unit shift) for the dominant eigenpair.
///
/// Fails after `10^5` iterations without meeting `tol` on the unshifted
/// residual; the result satisfies `|e^{alpha*} P mu* - mu*| <= 10 tol`.
pub fn eigen_oracle(model: &EigenModel, tol: f64) -> Result<EigenOracle> {
    let n = model.n_states();
    let m = model.dense();
    let shifted = &m + DMatrix::<f64>::identity(n, n);
    let mut v = nalgebra::DVector::<f64>::from_element(n, 1.0);
    let mut lambda = 0.0;
    let mut converged = false;
    for _ in 0..100_000 {
        let w = &shifted * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Err(Error::Numerical("power iteration collapsed to zero".into()));
        }
        v = w / norm;
        let mv = &m * &v;
        lambda = v.dot(&mv) / v.dot(&v);
        let residual = (&mv - lambda * &v).amax();
        if residual <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "power iteration did not reach tolerance {tol:e} in 100000 iterations"
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Numerical(format!(
            "dominant eigenvalue {lambda} is not positive"
        )));
    }
    if v[0] <= 0.0 {
        v = -v;
    }
    let mu_star: Vec<f64> = (0..n).map(|i| v[i] / v[0]).collect();
    let alpha_star = -lambda.ln();

    // Eigen-identity residual with the final normalization.
    let residual = (0..n)
        .map(|x| {
            let px: f64 = (0..n).map(|y| model.p(x, y) * mu_star[y]).sum();
            ((-alpha_star).exp().recip() * px - mu_star[x]).abs()
        })
        .fold(0.0, f64::max);
    if residual > ORACLE_RESIDUAL_FACTOR * tol {
        return Err(Error::Numerical(format!(
            "eigen identity residual {residual:e} exceeds {ORACLE_RESIDUAL_FACTOR} * tol"
        )));
    }

    Ok(EigenOracle {
        lambda_pf: lambda,
        alpha_star,
        mu_star,
    })
}

/// The alpha-free tilted return kernel for a positive eigenvector estimate.
#[derive(Debug, Clone)]
pub struct EigenTilted<'a> {
    model: &'a EigenModel,
    g: Vec<f64>,
    l: Vec<Vec<f64>>,
    cumulative: Vec<Vec<(usize, f64)>>,
}

impl<'a> EigenTilted<'a> {
    /// Build the kernel for `nu`, given on states `1..=d` (strictly
    /// positive). The cemetery and the return state carry no tilt weight.
    pub fn build(model: &'a EigenModel, nu: &[f64]) -> Result<Self> {
        if nu.len() != model.d() {
            return Err(Error::Domain(format!(
                "tilt has {} entries, model has d = {}",
                nu.len(),
                model.d()
            )));
        }
        if nu.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Assumption(
                "eigenvector estimate must be strictly positive".into(),
            ));
        }
        let n = model.n_states();
        let weight = |y: usize| -> f64 {
            if y == 0 {
                1.0
            } else {
                nu[y - 1]
            }
        };
        let mut g = vec![0.0; n];
        let mut l = vec![vec![f64::INFINITY; n]; n];
        let mut cumulative: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for x in 0..n {
            let mut norm = 0.0;
            for y in 0..n {
                norm += weight(y) * model.p(x, y);
            }
            if !(norm > 0.0) {
                return Err(Error::Numerical(format!(
                    "tilted normalizer at state {x} is not positive"
                )));
            }
            g[x] = norm;
            let mut acc = 0.0;
            for y in 0..n {
                if model.p(x, y) > 0.0 {
                    l[x][y] = norm / weight(y);
                    acc += weight(y) * model.p(x, y) / norm;
                    cumulative[x].push((y, acc));
                }
            }
        }
        Ok(Self {
            model,
            g,
            l,
            cumulative,
        })
    }

    pub fn model(&self) -> &EigenModel {
        self.model
    }

    pub fn normalizer(&self, x: usize) -> f64 {
        self.g[x]
    }

    pub fn likelihood_ratio(&self, x: usize, y: usize) -> f64 {
        self.l[x][y]
    }

    /// Tilted transition probability; `q * l = p` on sampled transitions.
    pub fn q(&self, x: usize, y: usize) -> f64 {
        if self.model.p(x, y) == 0.0 {
            return 0.0;
        }
        self.model.p(x, y) / self.l[x][y]
    }

    fn step(&self, x: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.cumulative[x];
        debug_assert!(!row.is_empty());
        let u: f64 = rng.gen();
        for &(y, c) in row {
            if u < c {
                return y;
            }
        }
        row[row.len() - 1].0
    }
}

/// One completed passage to the return state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassageSample {
    /// Number of steps taken (the return time when started at 0).
    pub steps: usize,
    /// Accumulated log likelihood ratio along the passage.
    pub log_lr: f64,
}

/// Walk from `x0` until the first entry into the return state.
///
/// Under the tilted kernel the cemetery is unreachable, so every path
/// terminates at state 0; exceeding `max_steps` is reported as a budget
/// error since it can only happen with astronomically small probability.
pub fn simulate_passage(
    tilted: &EigenTilted,
    x0: usize,
    rng: &mut ChaCha8Rng,
    max_steps: usize,
) -> Result<PassageSample> {
    if x0 >= tilted.model().n_states() {
        return Err(Error::Domain(format!("state {x0} out of range")));
    }
    let mut x = x0;
    let mut log_lr = 0.0;
    for n in 1..=max_steps {
        let y = tilted.step(x, rng);
        log_lr += tilted.likelihood_ratio(x, y).ln();
        if y == 0 {
            return Ok(PassageSample { steps: n, log_lr });
        }
        x = y;
    }
    Err(Error::Budget(format!(
        "passage from {x0} not completed within {max_steps} steps"
    )))
}

/// Simulate `r` regeneration cycles from the return state.
///
/// Emits per-replication `(tau, log L)`, sufficient to evaluate the weighted
/// return curve at any exponent without re-simulation. Any censored cycle
/// fails the batch, with the count in the error.
pub fn simulate_regeneration(
    tilted: &EigenTilted,
    r: usize,
    seed: u64,
    max_steps: usize,
) -> Result<Vec<PassageSample>> {
    if r == 0 {
        return Err(Error::Domain("replication count must be at least 1".into()));
    }
    let runs: Vec<std::result::Result<PassageSample, ()>> = (0..r as u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = derive_rng(seed, &[EIGEN_TAG, 0, rep]);
            simulate_passage(tilted, 0, &mut rng, max_steps).map_err(|_| ())
        })
        .collect();
    let censored = runs.iter().filter(|s| s.is_err()).count();
    if censored > 0 {
        return Err(Error::Budget(format!(
            "{censored} of {r} regeneration cycles censored at {max_steps} steps"
        )));
    }
    Ok(runs.into_iter().map(|s| s.unwrap()).collect())
}

/// Evaluate the estimated weighted-return curve at exponent `alpha`:
/// the average of `exp(alpha * tau_i + log L_i)`, via log-sum-exp.
pub fn weighted_return(samples: &[PassageSample], alpha: f64) -> f64 {
    (log_weighted_return(samples, alpha)).exp()
}

fn log_weighted_return(samples: &[PassageSample], alpha: f64) -> f64 {
    let logs: Vec<f64> = samples
        .iter()
        .map(|s| alpha * s.steps as f64 + s.log_lr)
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln() - (samples.len() as f64).ln()
}

/// Residual tolerance for the root of the weighted-return curve.
pub const ROOT_TOL: f64 = 1e-12;

/// Solve for the exponent at which the estimated weighted-return curve
/// equals 1, before any clamping.
///
/// The curve is pathwise strictly increasing and convex in the exponent
/// (every return time is at least 1), vanishing at minus infinity and
/// diverging at plus infinity, so a unique root exists; it is found by
/// bracket doubling plus bisection.
pub fn solve_alpha_root(samples: &[PassageSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot solve on an empty sample".into()));
    }
    if samples.iter().any(|s| s.steps == 0) {
        return Err(Error::Domain("return times must be at least 1".into()));
    }
    let f = |alpha: f64| log_weighted_return(samples, alpha);
    let mut lo = -1.0;
    let mut hi = 1.0;
    for _ in 0..200 {
        if f(lo) < 0.0 {
            break;
        }
        lo *= 2.0;
    }
    for _ in 0..200 {
        if f(hi) > 0.0 {
            break;
        }
        hi *= 2.0;
    }
    if !(f(lo) < 0.0 && f(hi) > 0.0) {
        return Err(Error::Numerical("failed to bracket the root".into()));
    }
    for _ in 0..500 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v.exp() - 1.0).abs() <= ROOT_TOL {
            return Ok(mid);
        }
        if v < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::Numerical("bisection failed to converge".into()))
}

/// Root of the weighted-return curve, clamped into `[0, alpha_max]`.
pub fn solve_alpha(samples: &[PassageSample], alpha_max: f64) -> Result<f64> {
    Ok(solve_alpha_root(samples)?.clamp(0.0, alpha_max))
}

/// Configuration of an adaptive eigen run.
#[derive(Debug, Clone)]
pub struct EigenConfig {
    pub replications: usize,
    pub n_iters: usize,
    pub seed: u64,
    /// Exponent cap; defaults to the model's [`EigenModel::default_alpha_max`].
    pub alpha_max: Option<f64>,
    pub max_steps: usize,
    /// Clamp box for the eigenvector estimate; defaults to
    /// `[0.5 min mu*, 2 max mu*]` from the oracle.
    pub clamp: Option<(f64, f64)>,
}

/// One iteration row of an adaptive eigen run.
#[derive(Debug, Clone)]
pub struct EigenIterationRow {
    pub alpha_hat: f64,
    pub alpha_error: f64,
    /// Sup error of the post-update eigenvector estimate on states `1..=d`.
    pub nu_sup_error: f64,
    /// Mean signed deviation of the post-update estimate from the exact
    /// eigenvector (the empirical bias diagnostic).
    pub nu_bias: f64,
}

/// Trace of an adaptive eigen run, with oracle errors per iteration.
#[derive(Debug, Clone)]
pub struct EigenTrace {
    pub oracle: EigenOracle,
    /// Eigenvector estimates, the initial one first (entries for `1..=d`).
    pub iterates: Vec<Vec<f64>>,
    pub rows: Vec<EigenIterationRow>,
}

impl EigenTrace {
    pub fn final_alpha(&self) -> f64 {
        self.rows.last().map(|r| r.alpha_hat).unwrap_or(f64::NAN)
    }
}

/// Run the two-step adaptive iteration: root-find the exponent from
/// regeneration cycles, then re-estimate the eigenvector at that exponent.
pub fn run_eigen_adaptive(
    model: &EigenModel,
    init_nu: &[f64],
    config: &EigenConfig,
) -> Result<EigenTrace> {
    if config.replications == 0 || config.n_iters == 0 {
        return Err(Error::Domain("replications and n_iters must be at least 1".into()));
    }
    let oracle = eigen_oracle(model, 1e-12)?;
    let alpha_max = config.alpha_max.unwrap_or_else(|| model.default_alpha_max());
    if alpha_max <= oracle.alpha_star {
        return Err(Error::Domain(format!(
            "alpha_max {alpha_max} does not exceed the exact exponent {}",
            oracle.alpha_star
        )));
    }
    let d = model.d();
    let clamp = config.clamp.unwrap_or_else(|| {
        let lo = oracle.mu_star[1..].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = oracle.mu_star[1..].iter().copied().fold(1.0, f64::max);
        (0.5 * lo.min(1.0), 2.0 * hi)
    });

    let mut nu = init_nu.to_vec();
    let mut iterates = vec![nu.clone()];
    let mut rows = Vec::with_capacity(config.n_iters);

    for n in 0..config.n_iters {
        let tilted = EigenTilted::build(model, &nu)?;
        let regen_seed = derive_seed(config.seed, &[EIGEN_TAG, n as u64, 0]);
        let samples = simulate_regeneration(&tilted, config.replications, regen_seed, config.max_steps)?;
        let alpha_hat = solve_alpha(&samples, alpha_max)?;

        let mut next = vec![0.0; d];
        for x in 1..=d {
            let state_seed = derive_seed(config.seed, &[EIGEN_TAG, n as u64, x as u64]);
            let cycles: Vec<PassageSample> = (0..config.replications as u64)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = derive_rng(state_seed, &[EIGEN_TAG, x as u64, rep]);
                    simulate_passage(&tilted, x, &mut rng, config.max_steps)
                })
                .collect::<Result<_>>()?;
            let estimate = weighted_return(&cycles, alpha_hat);
            next[x - 1] = estimate.clamp(clamp.0, clamp.1);
        }
        nu = next;
        iterates.push(nu.clone());

        let nu_sup_error = nu
            .iter()
            .enumerate()
            .map(|(i, v)| (v - oracle.mu_star[i + 1]).abs())
            .fold(0.0, f64::max);
        let nu_bias = if d > 0 {
            nu.iter()
                .enumerate()
                .map(|(i, v)| v - oracle.mu_star[i + 1])
                .sum::<f64>()
                / d as f64
        } else {
            0.0
        };
        rows.push(EigenIterationRow {
            alpha_hat,
            alpha_error: (alpha_hat - oracle.alpha_star).abs(),
            nu_sup_error,
            nu_bias,
        });
    }

    Ok(EigenTrace {
        oracle,
        iterates,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> EigenModel {
        EigenModel::new(vec![vec![0.3, 0.4], vec![0.5, 0.2]]).unwrap()
    }

    #[test]
    fn oracle_on_closed_form_model() {
        let m = two_by_two();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        assert!((oracle.lambda_pf - 0.7).abs() < 1e-10);
        assert!((oracle.alpha_star - (-0.7_f64.ln())).abs() < 1e-10);
        assert!((oracle.mu_star[0] - 1.0).abs() < 1e-14);
        assert!((oracle.mu_star[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn oracle_on_scaled_stochastic_matrix() {
        let c = 0.6;
        let m = EigenModel::new(vec![
            vec![0.2 * c, 0.5 * c, 0.3 * c],
            vec![0.4 * c, 0.1 * c, 0.5 * c],
            vec![0.25 * c, 0.25 * c, 0.5 * c],
        ])
        .unwrap();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        assert!((oracle.lambda_pf - c).abs() < 1e-10);
        for v in &oracle.mu_star {
            assert!((v - 1.0).abs() < 1e-9, "eigenvector should be flat, got {v}");
        }
    }

    #[test]
    fn oracle_invariant_under_relabeling() {
        // Swap the two non-return labels; the eigenvalue must not move and
        // the eigenvector must permute.
        let a = EigenModel::new(vec![
            vec![0.1, 0.3, 0.4],
            vec![0.2, 0.1, 0.5],
            vec![0.3, 0.3, 0.2],
        ])
        .unwrap();
        let b = EigenModel::new(vec![
            vec![0.1, 0.4, 0.3],
            vec![0.3, 0.2, 0.3],
            vec![0.2, 0.5, 0.1],
        ])
        .unwrap();
        let oa = eigen_oracle(&a, 1e-12).unwrap();
        let ob = eigen_oracle(&b, 1e-12).unwrap();
        assert!((oa.lambda_pf - ob.lambda_pf).abs() < 1e-10);
        assert!((oa.mu_star[1] - ob.mu_star[2]).abs() < 1e-9);
        assert!((oa.mu_star[2] - ob.mu_star[1]).abs() < 1e-9);
    }

    #[test]
    fn reducible_matrix_rejected() {
        assert!(matches!(
            EigenModel::new(vec![vec![0.5, 0.0], vec![0.3, 0.3]]),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn kernel_is_alpha_free_by_construction_and_exact_at_the_fixed_point() {
        // At nu = mu* every transition carries likelihood ratio lambda_pf,
        // so log L at return is exactly -alpha* tau.
        let m = two_by_two();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        let tilted = EigenTilted::build(&m, &oracle.mu_star[1..]).unwrap();
        for rep in 0..500 {
            let mut rng = derive_rng(3, &[rep]);
            let s = simulate_passage(&tilted, 0, &mut rng, 10_000).unwrap();
            assert!(
                (s.log_lr + oracle.alpha_star * s.steps as f64).abs() <= 1e-10,
                "fixed-point likelihood identity failed: {} vs {}",
                s.log_lr,
                -oracle.alpha_star * s.steps as f64
            );
        }
    }

    #[test]
    fn kernel_matches_the_general_reward_framework() {
        // Embedding the eigen chain as an absorbing reward model (cemetery
        // made explicit, unit reward into the return state, constant
        // exponential discount) must reproduce the same tilted kernel on the
        // non-return rows for ANY exponent, since the discount cancels from
        // the ratio. Two far-apart exponents agree with the alpha-free
        // construction to rounding.
        let m = EigenModel::new(vec![
            vec![0.1, 0.3, 0.4],
            vec![0.2, 0.1, 0.5],
            vec![0.3, 0.3, 0.2],
        ])
        .unwrap();
        let nu = [0.8, 1.7];
        let tilted = EigenTilted::build(&m, &nu).unwrap();

        let d = m.d();
        for alpha in [0.3_f64, 0.9] {
            let n = d + 2; // states 0..=d plus explicit cemetery
            let mut p = vec![vec![0.0; n]; n];
            let mut s = vec![vec![0.0; n]; n];
            let beta = vec![vec![alpha.exp(); n]; n];
            for x in 0..=d {
                let mut defect = 1.0;
                for y in 0..=d {
                    p[x][y] = m.p(x, y);
                    defect -= m.p(x, y);
                }
                p[x][d + 1] = defect.max(0.0);
            }
            p[d + 1][d + 1] = 1.0;
            for x in 1..=d {
                s[x][0] = 1.0;
            }
            let embedded =
                crate::model::MarkovRewardModel::new(n, &[0, d + 1], p, s, beta).unwrap();
            let mut full_nu = vec![0.0; n];
            full_nu[1..=d].copy_from_slice(&nu);
            let value = crate::value::ValueFunction::from_full(&embedded, full_nu).unwrap();
            let general = crate::tilt::TiltedModel::build(&embedded, &value).unwrap();
            for x in 1..=d {
                for y in 0..=d {
                    assert!(
                        (general.q(x, y) - tilted.q(x, y)).abs() < 1e-12,
                        "kernel mismatch at ({x},{y}) for alpha {alpha}"
                    );
                }
                assert!((general.q(x, d + 1)).abs() < 1e-15, "cemetery got tilted mass");
            }
        }
    }

    #[test]
    fn censored_passage_is_a_budget_error() {
        // A two-cycle through state 1 forces a return time of exactly 2, so
        // a one-step cap censors every cycle.
        let m = EigenModel::new(vec![vec![0.0, 0.9], vec![0.9, 0.0]]).unwrap();
        let tilted = EigenTilted::build(&m, &[1.0]).unwrap();
        assert!(matches!(
            simulate_regeneration(&tilted, 10, 1, 1),
            Err(Error::Budget(_))
        ));
        assert!(simulate_regeneration(&tilted, 10, 1, 2).is_ok());
    }

    #[test]
    fn single_replication_trace_is_produced() {
        let m = two_by_two();
        let config = EigenConfig {
            replications: 1,
            n_iters: 3,
            seed: 1,
            alpha_max: None,
            max_steps: 100_000,
            clamp: None,
        };
        let trace = run_eigen_adaptive(&m, &[0.5], &config).unwrap();
        assert_eq!(trace.rows.len(), 3);
        assert!(trace.rows.iter().all(|r| r.alpha_hat.is_finite()));
    }

    #[test]
    fn weighted_return_strictly_increasing() {
        let m = two_by_two();
        let tilted = EigenTilted::build(&m, &[0.7]).unwrap();
        let samples = simulate_regeneration(&tilted, 500, 5, 100_000).unwrap();
        let mut prev = weighted_return(&samples, -1.0);
        for k in 1..=20 {
            let alpha = -1.0 + 0.1 * k as f64;
            let cur = weighted_return(&samples, alpha);
            assert!(cur > prev, "curve not strictly increasing at {alpha}");
            prev = cur;
        }
        let fd = (weighted_return(&samples, 0.2 + 1e-6) - weighted_return(&samples, 0.2)) / 1e-6;
        assert!(fd > 0.0);
    }

    #[test]
    fn root_solving_hand_cases() {
        // e^a + e^{2a} = 2 has the root a = 0.
        let samples = vec![
            PassageSample { steps: 1, log_lr: 0.0 },
            PassageSample { steps: 2, log_lr: 0.0 },
        ];
        let root = solve_alpha_root(&samples).unwrap();
        assert!(root.abs() < 1e-9);

        // Single sample (tau = 3, L = 8): root -(ln 8)/3, clamped to 0.
        let single = vec![PassageSample { steps: 3, log_lr: 8.0_f64.ln() }];
        let root = solve_alpha_root(&single).unwrap();
        assert!((root + 8.0_f64.ln() / 3.0).abs() < 1e-9);
        assert_eq!(solve_alpha(&single, 1.0).unwrap(), 0.0);

        assert!(solve_alpha_root(&[]).is_err());
    }

    #[test]
    fn root_residual_within_tolerance() {
        let m = two_by_two();
        let tilted = EigenTilted::build(&m, &[1.3]).unwrap();
        let samples = simulate_regeneration(&tilted, 2_000, 9, 100_000).unwrap();
        let root = solve_alpha_root(&samples).unwrap();
        assert!((weighted_return(&samples, root) - 1.0).abs() <= ROOT_TOL);
    }

    #[test]
    fn fixed_point_root_is_exact() {
        // With nu = mu*, the weighted return at alpha* is pathwise 1, so the
        // root solver lands on alpha* no matter the sample.
        let m = two_by_two();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        let tilted = EigenTilted::build(&m, &oracle.mu_star[1..]).unwrap();
        let samples = simulate_regeneration(&tilted, 50, 2, 100_000).unwrap();
        let root = solve_alpha_root(&samples).unwrap();
        assert!((root - oracle.alpha_star).abs() < 1e-9);
    }

    #[test]
    fn single_state_regeneration() {
        let m = EigenModel::new(vec![vec![0.6]]).unwrap();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        assert!((oracle.lambda_pf - 0.6).abs() < 1e-12);
        let tilted = EigenTilted::build(&m, &[]).unwrap();
        let samples = simulate_regeneration(&tilted, 100, 1, 10).unwrap();
        assert!(samples.iter().all(|s| s.steps == 1));
        let root = solve_alpha_root(&samples).unwrap();
        assert!((root - oracle.alpha_star).abs() < 1e-12);
    }

    #[test]
    fn adaptive_run_converges_on_small_model() {
        let m = two_by_two();
        let config = EigenConfig {
            replications: 2_000,
            n_iters: 6,
            seed: 17,
            alpha_max: None,
            max_steps: 100_000,
            clamp: None,
        };
        let trace = run_eigen_adaptive(&m, &[0.5], &config).unwrap();
        let last = trace.rows.last().unwrap();
        assert!(
            last.alpha_error < 2e-2,
            "alpha error after adaptation: {}",
            last.alpha_error
        );
        assert!(last.nu_sup_error < 0.1);
    }

    #[test]
    fn adaptive_fixed_point_stays() {
        let m = two_by_two();
        let oracle = eigen_oracle(&m, 1e-12).unwrap();
        let config = EigenConfig {
            replications: 200,
            n_iters: 3,
            seed: 4,
            alpha_max: None,
            max_steps: 100_000,
            clamp: None,
        };
        let trace = run_eigen_adaptive(&m, &oracle.mu_star[1..], &config).unwrap();
        for row in &trace.rows {
            assert!(row.alpha_error < 1e-9, "alpha drifted: {}", row.alpha_error);
        }
    }
}
