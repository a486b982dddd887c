//! Tilted kernels, likelihood ratios, trajectory simulation and Monte Carlo
//! estimation of the value function.
//!
//! For a positive tilting function `nu` on the transient states, the tilted
//! kernel reweights each transition by `(s(x,y) + nu(y)) beta(x,y)` and
//! renormalizes by `g(x) = sum_y (s(x,y) + nu(y)) beta(x,y) P(x,y)`. The
//! likelihood ratio `l_nu = g / ((s + nu) beta)` restores the original
//! measure, and the filtered estimator
//!
//! ```text
//! Y_nu = sum_{i=1..tau} s(X_{i-1}, X_i) * B_i * L_i
//! ```
//!
//! (discount product `B`, running ratio product `L`) is unbiased for the
//! exact value function under every admissible tilt, and almost surely
//! constant under the tilt by the exact value function itself.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::MarkovRewardModel;
use crate::streams::derive_rng;
use crate::value::ValueFunction;

/// Stream-path tag separating replication streams from other consumers.
const REPLICATION_TAG: u64 = 0x7265706c;

/// A model tilted by a positive candidate value function.
///
/// Immutable after construction and freely shareable across workers.
/// Transitions with zero tilted weight (`s + nu = 0`, only possible into the
/// absorbing set) carry an infinite likelihood-ratio sentinel and are
/// excluded from the sampling tables entirely.
#[derive(Debug, Clone)]
pub struct TiltedModel<'a> {
    model: &'a MarkovRewardModel,
    nu: ValueFunction,
    g: Vec<f64>,
    q: Vec<Vec<f64>>,
    l: Vec<Vec<f64>>,
    support: Vec<Vec<(usize, f64)>>,
    cumulative: Vec<Vec<(usize, f64)>>,
}

impl<'a> TiltedModel<'a> {
    /// Build the tilted kernel for `nu`, which must be strictly positive on
    /// every transient state.
    pub fn build(model: &'a MarkovRewardModel, nu: &ValueFunction) -> Result<Self> {
        model.ensure_valid()?;
        if nu.len() != model.n_states() {
            return Err(Error::Domain("tilt length does not match model".into()));
        }
        if !nu.is_positive_on_transient(model) {
            return Err(Error::Assumption(
                "tilting function must be strictly positive on transient states".into(),
            ));
        }
        let n = model.n_states();
        let mut g = vec![0.0; n];
        let mut q = vec![vec![0.0; n]; n];
        let mut l = vec![vec![1.0; n]; n];
        let mut support: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut cumulative: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

        for x in 0..n {
            if model.is_absorbing(x) {
                // Rows in the absorbing set keep the base dynamics; they are
                // never sampled because simulation stops on entry.
                for y in 0..n {
                    q[x][y] = model.p(x, y);
                    if model.p(x, y) > 0.0 {
                        support[x].push((y, model.p(x, y)));
                    }
                }
            } else {
                let mut norm = 0.0;
                for y in 0..n {
                    norm += (model.s(x, y) + nu.get(y)) * model.beta(x, y) * model.p(x, y);
                }
                if !(norm > 0.0) {
                    return Err(Error::Numerical(format!(
                        "tilted normalizer at state {x} is not positive ({norm})"
                    )));
                }
                g[x] = norm;
                for y in 0..n {
                    let weight = model.s(x, y) + nu.get(y);
                    if weight > 0.0 {
                        l[x][y] = norm / (weight * model.beta(x, y));
                        let qxy = weight * model.beta(x, y) * model.p(x, y) / norm;
                        q[x][y] = qxy;
                        if qxy > 0.0 {
                            support[x].push((y, qxy));
                        }
                    } else {
                        // Zero tilted mass: never sampled under this kernel.
                        l[x][y] = f64::INFINITY;
                    }
                }
            }
            let mut acc = 0.0;
            for &(y, w) in &support[x] {
                acc += w;
                cumulative[x].push((y, acc));
            }
        }

        Ok(Self {
            model,
            nu: nu.clone(),
            g,
            q,
            l,
            support,
            cumulative,
        })
    }

    pub fn model(&self) -> &MarkovRewardModel {
        self.model
    }

    pub fn tilt(&self) -> &ValueFunction {
        &self.nu
    }

    /// Normalizer `g(x)`; positive on transient states.
    pub fn normalizer(&self, x: usize) -> f64 {
        self.g[x]
    }

    /// Tilted transition probability.
    pub fn q(&self, x: usize, y: usize) -> f64 {
        self.q[x][y]
    }

    /// Likelihood ratio `l_nu(x, y)`; infinite on zero-mass transitions.
    pub fn likelihood_ratio(&self, x: usize, y: usize) -> f64 {
        self.l[x][y]
    }

    /// Sampled transitions `(y, Q(x,y))` out of `x`.
    pub fn support(&self, x: usize) -> &[(usize, f64)] {
        &self.support[x]
    }

    /// One-step conditional weight `l_nu(x,y) beta(x,y) = g(x)/(s(x,y)+nu(y))`,
    /// the factor the filtered estimator picks up per transition.
    pub fn step_weight(&self, x: usize, y: usize) -> f64 {
        self.g[x] / (self.model.s(x, y) + self.nu.get(y))
    }

    /// Sample a transition out of `x` by inverse CDF with the strict tie rule
    /// `u < c`, which pins down the draw bit-for-bit across platforms.
    fn step(&self, x: usize, rng: &mut ChaCha8Rng) -> usize {
        let row = &self.cumulative[x];
        debug_assert!(!row.is_empty(), "sampling from empty row {x}");
        let u: f64 = rng.gen();
        for &(y, c) in row {
            if u < c {
                return y;
            }
        }
        row[row.len() - 1].0
    }
}

/// One simulated path under a tilted kernel.
#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Visited states `X_0..X_last`.
    pub states: Vec<usize>,
    /// Absorption step, or `None` when the path was censored at the cap.
    pub tau: Option<usize>,
    /// Cumulative log likelihood ratio after each step.
    pub log_lr: Vec<f64>,
    /// Realized filtered estimator (partial sum when censored).
    pub y_value: f64,
    /// Terminal reward `s(X_{tau-1}, X_tau)`; zero when censored.
    pub terminal_reward: f64,
}

impl Trajectory {
    pub fn is_censored(&self) -> bool {
        self.tau.is_none()
    }

    /// Cumulative log likelihood ratio at the end of the path.
    pub fn final_log_lr(&self) -> f64 {
        *self.log_lr.last().unwrap_or(&0.0)
    }
}

/// Simulate one trajectory from `x0` until absorption or `max_steps`.
///
/// The discount and ratio products accumulate additively in log space; each
/// reward term is exponentiated back individually, so paths survive the
/// geometric dynamic range of the ratio bounds.
pub fn simulate_one(
    tilted: &TiltedModel,
    x0: usize,
    rng: &mut ChaCha8Rng,
    max_steps: usize,
) -> Result<Trajectory> {
    if tilted.model().is_absorbing(x0) {
        return Err(Error::Domain(format!("start state {x0} is absorbing")));
    }
    if max_steps == 0 {
        return Err(Error::Domain("max_steps must be at least 1".into()));
    }
    let model = tilted.model();
    let mut states = Vec::with_capacity(8);
    let mut log_lr = Vec::with_capacity(8);
    states.push(x0);

    let mut x = x0;
    let mut log_l = 0.0;
    let mut log_b = 0.0;
    let mut y_value = 0.0;
    let mut tau = None;
    let mut terminal_reward = 0.0;

    for n in 1..=max_steps {
        let y = tilted.step(x, rng);
        log_b += model.beta(x, y).ln();
        log_l += tilted.likelihood_ratio(x, y).ln();
        let s = model.s(x, y);
        if s > 0.0 {
            y_value += s * (log_b + log_l).exp();
        }
        states.push(y);
        log_lr.push(log_l);
        if model.is_absorbing(y) {
            tau = Some(n);
            terminal_reward = s;
            break;
        }
        x = y;
    }

    Ok(Trajectory {
        states,
        tau,
        log_lr,
        y_value,
        terminal_reward,
    })
}

/// The RNG stream for replication `rep` of a batch addressed by
/// `(seed, x0)`. Exposed so external consumers can reproduce any single
/// replication of a batch estimate.
pub fn replication_rng(seed: u64, x0: usize, rep: u64) -> ChaCha8Rng {
    derive_rng(seed, &[REPLICATION_TAG, x0 as u64, rep])
}

/// Simulate replication `rep` of the `(seed, x0)` batch.
pub fn simulate_replication(
    tilted: &TiltedModel,
    x0: usize,
    seed: u64,
    rep: u64,
    max_steps: usize,
) -> Result<Trajectory> {
    let mut rng = replication_rng(seed, x0, rep);
    simulate_one(tilted, x0, &mut rng, max_steps)
}

/// Batch Monte Carlo estimate of the value function at one start state.
#[derive(Debug, Clone)]
pub struct MuEstimate {
    pub mean: f64,
    pub sample_variance: f64,
    pub censored: usize,
    /// Per-replication estimator values, in replication order.
    pub values: Vec<f64>,
    /// Set when fewer than two replications were requested, in which case the
    /// variance is reported as zero.
    pub insufficient_replications: bool,
}

/// Run `r` independent replications from `x0` and reduce them in replication
/// order.
///
/// Replications run in parallel; every stream is derived from
/// `(seed, x0, rep)` and the reduction is index-ordered, so the result is
/// bit-identical for any worker count.
pub fn estimate_mu(
    tilted: &TiltedModel,
    x0: usize,
    r: usize,
    seed: u64,
    max_steps: usize,
) -> Result<MuEstimate> {
    if r == 0 {
        return Err(Error::Domain("replication count must be at least 1".into()));
    }
    let runs: Vec<(f64, bool)> = (0..r as u64)
        .into_par_iter()
        .map(|rep| {
            let t = simulate_replication(tilted, x0, seed, rep, max_steps)?;
            Ok((t.y_value, t.is_censored()))
        })
        .collect::<Result<_>>()?;

    let censored = runs.iter().filter(|(_, c)| *c).count();
    let values: Vec<f64> = runs.into_iter().map(|(y, _)| y).collect();
    let mean = values.iter().sum::<f64>() / r as f64;
    let sample_variance = if r > 1 {
        values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (r as f64 - 1.0)
    } else {
        0.0
    };
    Ok(MuEstimate {
        mean,
        sample_variance,
        censored,
        values,
        insufficient_replications: r < 2,
    })
}

/// Empirical survival function of the absorption time: `P(tau > k)` for
/// `k = 0..=k_max`, from `r` replications.
pub fn tail_survival(
    tilted: &TiltedModel,
    x0: usize,
    r: usize,
    seed: u64,
    k_max: usize,
) -> Result<Vec<f64>> {
    if r < 100 {
        return Err(Error::Domain(
            "survival estimation needs at least 100 replications".into(),
        ));
    }
    let taus: Vec<Option<usize>> = (0..r as u64)
        .into_par_iter()
        .map(|rep| {
            let t = simulate_replication(tilted, x0, seed, rep, k_max + 1)?;
            Ok(t.tau)
        })
        .collect::<Result<_>>()?;

    let mut absorbed_by = vec![0usize; k_max + 1];
    for t in taus.iter().flatten() {
        if *t <= k_max {
            absorbed_by[*t] += 1;
        }
    }
    // Index k holds P(tau > k); tau >= 1 always, so survival[0] is 1.
    let mut survival = Vec::with_capacity(k_max + 1);
    let mut absorbed = 0usize;
    for item in absorbed_by.iter().take(k_max + 1) {
        absorbed += item;
        survival.push(1.0 - absorbed as f64 / r as f64);
    }
    Ok(survival)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::solve_mu;
    use crate::model::fixtures::{random_model, two_state};
    use crate::model::MarkovRewardModel;

    #[test]
    fn zero_variance_kernel_values() {
        let m = two_state();
        let mu = solve_mu(&m).unwrap();
        let t = TiltedModel::build(&m, &mu).unwrap();
        assert!((t.q(1, 0) - 0.25).abs() < 1e-15);
        assert!((t.q(1, 2) - 0.75).abs() < 1e-15);
        assert!((t.likelihood_ratio(1, 0) - 2.0).abs() < 1e-15);
        assert!((t.likelihood_ratio(1, 2) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn constant_tilt_kernel_values() {
        let m = two_state();
        let nu = ValueFunction::constant(&m, 1.0);
        let t = TiltedModel::build(&m, &nu).unwrap();
        assert!((t.normalizer(1) - 1.5).abs() < 1e-15);
        assert!((t.q(1, 0) - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.q(1, 2) - 2.0 / 3.0).abs() < 1e-15);
        // g = h + (P_beta nu): 1.0 + 0.5.
        let h = m.one_step_reward(1);
        let p_beta_nu: f64 = (0..3).map(|y| m.beta(1, y) * m.p(1, y) * nu.get(y)).sum();
        assert!((t.normalizer(1) - (h + p_beta_nu)).abs() < 1e-15);
    }

    #[test]
    fn rows_sum_to_one_and_measure_identity_holds() {
        use rand::Rng;
        for seed in 0..5 {
            let m = random_model(seed, 6);
            let mut rng = crate::streams::derive_rng(seed, &[1]);
            let nu = ValueFunction::from_fn(&m, |_| rng.gen_range(0.3..5.0));
            let t = TiltedModel::build(&m, &nu).unwrap();
            for &x in m.transient() {
                let row_sum: f64 = (0..m.n_states()).map(|y| t.q(x, y)).sum();
                assert!((row_sum - 1.0).abs() < 1e-12, "row {x} sums to {row_sum}");
                for y in 0..m.n_states() {
                    if m.s(x, y) + nu.get(y) > 0.0 {
                        let back = t.q(x, y) * t.likelihood_ratio(x, y);
                        assert!(
                            (back - m.p(x, y)).abs() < 1e-12,
                            "measure identity broken at ({x},{y})"
                        );
                    } else {
                        assert_eq!(t.q(x, y), 0.0);
                        assert!(t.likelihood_ratio(x, y).is_infinite());
                    }
                }
            }
        }
    }

    #[test]
    fn zero_mass_transitions_never_sampled() {
        // Two absorbing targets, one with zero reward: that transition keeps
        // probability under P but must vanish under the tilt.
        let p = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.3, 0.3, 0.4],
        ];
        let s = vec![
            vec![0.0; 3],
            vec![0.0; 3],
            vec![1.0, 0.0, 1.0],
        ];
        let beta = vec![vec![1.0; 3]; 3];
        let m = MarkovRewardModel::new(3, &[0, 1], p, s, beta).unwrap();
        let nu = ValueFunction::constant(&m, 1.0);
        let t = TiltedModel::build(&m, &nu).unwrap();
        assert_eq!(t.q(2, 1), 0.0);
        assert!(t.likelihood_ratio(2, 1).is_infinite());
        assert!(t.support(2).iter().all(|&(y, _)| y != 1));
        for rep in 0..200 {
            let traj = simulate_replication(&t, 2, 5, rep, 100).unwrap();
            assert!(traj.states.iter().all(|&st| st != 1));
        }
    }

    #[test]
    fn nonpositive_tilt_rejected() {
        let m = two_state();
        let nu = ValueFunction::from_full(&m, vec![0.0, 1.0, 0.0]).unwrap();
        assert!(matches!(
            TiltedModel::build(&m, &nu),
            Err(Error::Assumption(_))
        ));
    }

    #[test]
    fn zero_variance_paths_hit_the_value_exactly() {
        let m = two_state();
        let mu = solve_mu(&m).unwrap();
        let t = TiltedModel::build(&m, &mu).unwrap();
        for &x0 in m.transient() {
            for rep in 0..500 {
                let traj = simulate_replication(&t, x0, 11, rep, 10_000).unwrap();
                assert!(!traj.is_censored());
                assert!(
                    (traj.y_value - mu.get(x0)).abs() <= 1e-9 * mu.get(x0),
                    "path value {} deviates from {}",
                    traj.y_value,
                    mu.get(x0)
                );
            }
        }
    }

    #[test]
    fn short_path_value_matches_hand_computation() {
        // Under the zero-variance tilt the one-step absorption path collects
        // s * beta * l(1,0) = 2, the two-step path 2/3 + 4/3.
        let m = two_state();
        let mu = solve_mu(&m).unwrap();
        let t = TiltedModel::build(&m, &mu).unwrap();
        let one_step = m.s(1, 0) * m.beta(1, 0) * t.likelihood_ratio(1, 0);
        assert!((one_step - 2.0).abs() < 1e-12);
        let l1 = t.likelihood_ratio(1, 2);
        let l2 = l1 * t.likelihood_ratio(2, 0);
        let two_step = m.s(1, 2) * l1 + m.s(2, 0) * l2;
        assert!((two_step - 2.0).abs() < 1e-12);
    }

    #[test]
    fn censoring_flagged_with_partial_sum() {
        // State 1 cannot absorb in one step, so max_steps = 1 censors.
        let p = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.0],
        ];
        let s = vec![vec![0.0; 3], vec![1.0; 3], vec![1.0; 3]];
        let beta = vec![vec![1.0; 3]; 3];
        let m = MarkovRewardModel::new(3, &[0], p, s, beta).unwrap();
        let nu = ValueFunction::constant(&m, 1.0);
        let t = TiltedModel::build(&m, &nu).unwrap();
        let traj = simulate_replication(&t, 1, 3, 0, 1).unwrap();
        assert!(traj.is_censored());
        assert!(traj.y_value > 0.0);
        assert_eq!(traj.states.len(), 2);
    }

    #[test]
    fn estimate_respects_domain_checks() {
        let m = two_state();
        let mu = solve_mu(&m).unwrap();
        let t = TiltedModel::build(&m, &mu).unwrap();
        assert!(matches!(
            simulate_one(&t, 0, &mut replication_rng(0, 0, 0), 10),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            simulate_one(&t, 1, &mut replication_rng(0, 1, 0), 0),
            Err(Error::Domain(_))
        ));
        assert!(matches!(estimate_mu(&t, 1, 0, 0, 10), Err(Error::Domain(_))));
        let single = estimate_mu(&t, 1, 1, 0, 100).unwrap();
        assert!(single.insufficient_replications);
        assert_eq!(single.sample_variance, 0.0);
    }

    #[test]
    fn batch_mean_lands_in_exact_confidence_band() {
        // Exact variance of the filtered estimator at this tilt is 0.2
        // (one-step-conditioning recursion), so a 10^5-replication mean
        // sits within 3 sqrt(0.2 / 10^5) of the exact value 2.
        let m = two_state();
        let nu = ValueFunction::constant(&m, 1.0);
        let exact_var = crate::exact::exact_moments(&m, &nu)
            .unwrap()
            .variance(1)
            .unwrap();
        assert!((exact_var - 0.2).abs() < 1e-12);
        let t = TiltedModel::build(&m, &nu).unwrap();
        let r = 100_000;
        let est = estimate_mu(&t, 1, r, 2024, 1_000).unwrap();
        let band = 3.0 * (exact_var / r as f64).sqrt();
        assert!(
            (est.mean - 2.0).abs() <= band,
            "batch mean {} outside 3-sigma band {band}",
            est.mean
        );
        assert!((est.sample_variance - exact_var).abs() < 0.1 * exact_var);
    }

    #[test]
    fn estimates_are_thread_count_invariant() {
        let m = two_state();
        let nu = ValueFunction::constant(&m, 1.0);
        let t = TiltedModel::build(&m, &nu).unwrap();
        let baseline = estimate_mu(&t, 1, 512, 42, 1000).unwrap();
        for workers in [1, 3] {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .unwrap();
            let run = pool.install(|| estimate_mu(&t, 1, 512, 42, 1000).unwrap());
            assert_eq!(run.values, baseline.values, "worker count changed results");
            assert_eq!(run.mean.to_bits(), baseline.mean.to_bits());
        }
    }

    #[test]
    fn survival_curve_matches_geometry() {
        let m = two_state();
        let mu = solve_mu(&m).unwrap();
        let t = TiltedModel::build(&m, &mu).unwrap();
        let r = 20_000;
        let survival = tail_survival(&t, 1, r, 7, 12).unwrap();
        assert_eq!(survival[0], 1.0);
        // Exact survival from state 1 is 0.75^k under the zero-variance tilt.
        for (k, s_hat) in survival.iter().enumerate() {
            let exact = 0.75_f64.powi(k as i32);
            let sigma = (exact * (1.0 - exact) / r as f64).sqrt();
            assert!(
                (s_hat - exact).abs() <= 4.0 * sigma + 1.0 / r as f64,
                "survival at {k}: {s_hat} vs exact {exact}"
            );
        }
    }
}
