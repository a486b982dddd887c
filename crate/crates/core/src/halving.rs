//! The halving-chain counterexample: a weakly continuous kernel whose
//! iterates visit every neighborhood of the absorbing point infinitely often
//! yet can fail to converge.
//!
//! The chain lives on the dyadic orbit of 1: from `x = 2^-j` it jumps back to
//! 1 with probability `p(j)` and halves to `2^-(j-1+2)`... i.e. level `j+1`
//! otherwise. States are tracked as integer levels, so the orbit is exact:
//! no floating-point drift, and "visits to a neighborhood of 0" is just a
//! level threshold. Whether returns to 1 recur forever is governed by the
//! summability of the jump probabilities; the two shipped specs sit on the
//! two sides of that divide, and finite-horizon visit counts separate them
//! sharply.

use rand::Rng;

use crate::streams::derive_rng;

const HALVING_TAG: u64 = 0x68616c76;

/// Jump-probability profile of the chain.
#[derive(Debug, Clone, Copy)]
pub enum HalvingChainSpec {
    /// `p(0) = 1/2`, `p(j) = 1/(j+1)` for deeper levels: the divergent-sum
    /// case, with recurrent returns to state 1.
    Divergent,
    /// `p(j) = 0.1 * 4^-j`: summable even with exponential weights up to
    /// ratio 4, so the chain eventually halves forever.
    Summable,
    /// Custom profile for experiments.
    Custom {
        label: &'static str,
        p: fn(u64) -> f64,
    },
}

impl HalvingChainSpec {
    /// Probability of jumping back to state 1 from dyadic level `level`.
    pub fn jump_probability(&self, level: u64) -> f64 {
        match self {
            // The divergent profile at level 0 is capped below 1 so the chain
            // actually explores the orbit instead of sticking at state 1.
            HalvingChainSpec::Divergent => {
                if level == 0 {
                    0.5
                } else {
                    1.0 / (level as f64 + 1.0)
                }
            }
            HalvingChainSpec::Summable => 0.1 * 4.0_f64.powi(-(level.min(1_000) as i32)),
            HalvingChainSpec::Custom { p, .. } => p(level),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            HalvingChainSpec::Divergent => "divergent",
            HalvingChainSpec::Summable => "summable",
            HalvingChainSpec::Custom { label, .. } => label,
        }
    }
}

/// Record of one simulated run.
#[derive(Debug, Clone)]
pub struct HalvingRun {
    /// Number of returns to state 1 (level 0) after time zero.
    pub visits_to_one: u64,
    /// Times of those returns.
    pub visit_times: Vec<u64>,
    /// Level at the final step.
    pub final_level: u64,
    /// Deepest level reached, i.e. the level of the minimum state visited.
    pub deepest_level: u64,
}

/// Simulate `steps` transitions from state 1 (level 0).
pub fn simulate_halving(spec: &HalvingChainSpec, steps: u64, seed: u64) -> HalvingRun {
    let mut rng = derive_rng(seed, &[HALVING_TAG]);
    let mut level = 0u64;
    let mut run = HalvingRun {
        visits_to_one: 0,
        visit_times: Vec::new(),
        final_level: 0,
        deepest_level: 0,
    };
    for t in 1..=steps {
        let u: f64 = rng.gen();
        if u < spec.jump_probability(level) {
            level = 0;
            run.visits_to_one += 1;
            run.visit_times.push(t);
        } else {
            level += 1;
            run.deepest_level = run.deepest_level.max(level);
        }
    }
    run.final_level = level;
    run
}

/// Simulate two profiles against the same uniforms (common random numbers).
///
/// With pointwise ordered, level-nonincreasing profiles this couples the
/// chains monotonically: the larger profile never records fewer returns.
pub fn simulate_coupled(
    upper: &HalvingChainSpec,
    lower: &HalvingChainSpec,
    steps: u64,
    seed: u64,
) -> (HalvingRun, HalvingRun) {
    let mut rng = derive_rng(seed, &[HALVING_TAG, 2]);
    let mut runs = [
        (0u64, HalvingRun {
            visits_to_one: 0,
            visit_times: Vec::new(),
            final_level: 0,
            deepest_level: 0,
        }),
        (0u64, HalvingRun {
            visits_to_one: 0,
            visit_times: Vec::new(),
            final_level: 0,
            deepest_level: 0,
        }),
    ];
    for t in 1..=steps {
        let u: f64 = rng.gen();
        for (spec, entry) in [upper, lower].iter().zip(runs.iter_mut()) {
            let (level, run) = entry;
            if u < spec.jump_probability(*level) {
                *level = 0;
                run.visits_to_one += 1;
                run.visit_times.push(t);
            } else {
                *level += 1;
                run.deepest_level = run.deepest_level.max(*level);
            }
        }
    }
    let [(l0, mut r0), (l1, mut r1)] = runs;
    r0.final_level = l0;
    r1.final_level = l1;
    (r0, r1)
}

/// Per-run aggregate kept by batch experiments.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RunRecord {
    pub run_index: usize,
    pub visits_to_one: u64,
    pub deepest_level: u64,
    pub final_level: u64,
}

/// Batch statistics over independent runs of one spec.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ClassificationSummary {
    pub label: String,
    pub steps: u64,
    pub n_runs: usize,
    pub mean_visits: f64,
    pub median_final_level: u64,
    pub runs: Vec<RunRecord>,
    /// Methodological caveat carried into every output.
    pub note: String,
}

impl ClassificationSummary {
    pub fn fraction_with_visits_at_least(&self, k: u64) -> f64 {
        self.runs.iter().filter(|r| r.visits_to_one >= k).count() as f64 / self.n_runs as f64
    }

    pub fn fraction_with_visits_at_most(&self, k: u64) -> f64 {
        self.runs.iter().filter(|r| r.visits_to_one <= k).count() as f64 / self.n_runs as f64
    }
}

/// Run `n_runs` independent simulations and aggregate the visit statistics.
pub fn classify_experiment(
    spec: &HalvingChainSpec,
    steps: u64,
    n_runs: usize,
    seed: u64,
) -> ClassificationSummary {
    let mut runs = Vec::with_capacity(n_runs);
    let mut visit_total = 0u64;
    for i in 0..n_runs {
        let run_seed = crate::streams::derive_seed(seed, &[HALVING_TAG, i as u64]);
        let run = simulate_halving(spec, steps, run_seed);
        visit_total += run.visits_to_one;
        runs.push(RunRecord {
            run_index: i,
            visits_to_one: run.visits_to_one,
            deepest_level: run.deepest_level,
            final_level: run.final_level,
        });
    }
    let mut finals: Vec<u64> = runs.iter().map(|r| r.final_level).collect();
    finals.sort_unstable();
    ClassificationSummary {
        label: spec.label().to_string(),
        steps,
        n_runs,
        mean_visits: visit_total as f64 / n_runs as f64,
        median_final_level: finals[(finals.len().saturating_sub(1)) / 2],
        runs,
        note: "finite-horizon surrogate: recurrence is classified by visit counts \
               within the step budget, not by an infinitely-often property"
            .to_string(),
    }
}
