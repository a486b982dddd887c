//! The iterative tilt-refit algorithm and its convergence diagnostics.
//!
//! One iteration: simulate `R` replications of the filtered estimator from
//! every design state under the tilt by the current estimate, average, fit a
//! value-function model to the averages (tabular or linear-basis least
//! squares), clamp into the admissible box, and tilt by the result. The tilt
//! by the exact value function is a fixed point with zero simulation
//! variance, and the iteration approaches it at an exponential rate that
//! [`estimate_rate`] extracts from the recorded errors.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exact::{exact_moments, solve_mu};
use crate::model::MarkovRewardModel;
use crate::streams::derive_seed;
use crate::tilt::{estimate_mu, TiltedModel};
use crate::value::ValueFunction;

const ADAPT_TAG: u64 = 0x61646170;
const CONTRACTION_TAG: u64 = 0x636f6e74;

/// Iterates whose error reaches this floor stop the loop early.
pub const ERROR_FLOOR: f64 = 1e-12;

/// Errors at or below this floor are excluded from rate fitting.
pub const RATE_FIT_FLOOR: f64 = 1e-14;

/// Linear model for the value function: `offset + columns * alpha`,
/// estimated from averages at the design states.
#[derive(Debug, Clone)]
pub struct BasisModel {
    /// Design states (subset of the transient states) where simulation runs.
    pub design_states: Vec<usize>,
    /// Offset term, one entry per model state.
    pub offset: Vec<f64>,
    /// Basis columns, each one entry per model state; must be linearly
    /// independent on the design states.
    pub columns: Vec<Vec<f64>>,
}

/// How iterates are fitted from the per-design-state averages.
#[derive(Debug, Clone)]
pub enum FitSpec {
    /// Design states are all transient states; the fit is the clamped
    /// averages themselves.
    Tabular,
    /// Ordinary least squares on a linear basis.
    Basis(BasisModel),
}

impl FitSpec {
    pub fn design_states<'a>(&'a self, model: &'a MarkovRewardModel) -> &'a [usize] {
        match self {
            FitSpec::Tabular => model.transient(),
            FitSpec::Basis(b) => &b.design_states,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            FitSpec::Tabular => "tabular",
            FitSpec::Basis(_) => "basis",
        }
    }
}

/// Fit a value function to the averages `ybar` observed at the design states
/// and clamp it into `[clamp.0, clamp.1]`.
pub fn fit_values(
    model: &MarkovRewardModel,
    ybar: &[f64],
    fit: &FitSpec,
    clamp: (f64, f64),
) -> Result<ValueFunction> {
    let (lo, hi) = clamp;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::Domain(format!(
            "clamp bounds ({lo}, {hi}) must satisfy 0 < lo <= hi"
        )));
    }
    if ybar.iter().any(|y| !y.is_finite() || *y < 0.0) {
        return Err(Error::Domain("averages must be finite and nonnegative".into()));
    }
    let design = fit.design_states(model);
    if ybar.len() != design.len() {
        return Err(Error::Domain(format!(
            "got {} averages for {} design states",
            ybar.len(),
            design.len()
        )));
    }

    match fit {
        FitSpec::Tabular => {
            let mut values = vec![0.0; model.n_states()];
            for (i, &x) in design.iter().enumerate() {
                values[x] = ybar[i].clamp(lo, hi);
            }
            ValueFunction::from_full(model, values)
        }
        FitSpec::Basis(basis) => {
            let d = design.len();
            let p = basis.columns.len();
            if p == 0 || p > d {
                return Err(Error::Estimation(format!(
                    "basis with {p} columns needs between 1 and {d} design states"
                )));
            }
            let mut design_matrix = DMatrix::<f64>::zeros(d, p);
            let mut target = DVector::<f64>::zeros(d);
            for (i, &x) in design.iter().enumerate() {
                target[i] = ybar[i] - basis.offset[x];
                for (j, column) in basis.columns.iter().enumerate() {
                    design_matrix[(i, j)] = column[x];
                }
            }
            let svd = design_matrix.svd(true, true);
            let sigma_max = svd.singular_values.max();
            let eps = 1e-12 * sigma_max.max(1.0);
            if svd.rank(eps) < p {
                return Err(Error::Estimation("design matrix is rank deficient".into()));
            }
            let alpha = svd
                .solve(&target, eps)
                .map_err(|e| Error::Estimation(format!("least squares failed: {e}")))?;
            let fitted = ValueFunction::from_fn(model, |x| {
                let mut v = basis.offset[x];
                for (j, column) in basis.columns.iter().enumerate() {
                    v += column[x] * alpha[j];
                }
                v
            });
            Ok(fitted.clamped(model, lo, hi))
        }
    }
}

/// Configuration of an adaptive run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptiveConfig {
    pub replications: usize,
    pub n_iters: usize,
    pub seed: u64,
    pub max_steps: usize,
    /// Box `[floor, cap]` every fitted iterate is clamped into.
    pub clamp: (f64, f64),
}

/// Full record of an adaptive run, including the exact errors per iterate.
#[derive(Debug, Clone)]
pub struct AdaptiveTrace {
    /// Iterates `mu^(0)..mu^(N)`; the first entry is the initial estimate.
    pub iterates: Vec<ValueFunction>,
    /// Sup-norm error against the exact value function, one per iterate.
    pub sup_errors: Vec<f64>,
    /// Per update, the largest variance-of-the-mean over the design states.
    pub sample_vars: Vec<f64>,
    /// Per update, the total number of censored replications.
    pub censored: Vec<usize>,
    /// Per update, whether every replication was censored (in which case the
    /// previous iterate was retained).
    pub flagged: Vec<bool>,
    /// Fitted convergence rate, once extracted.
    pub theta_hat: Option<f64>,
    pub config: AdaptiveConfig,
    /// Fit mode label ("tabular" or "basis").
    pub mode: String,
}

impl AdaptiveTrace {
    pub fn final_sup_error(&self) -> f64 {
        *self.sup_errors.last().expect("trace has at least the initial iterate")
    }

    pub fn censored_total(&self) -> usize {
        self.censored.iter().sum()
    }
}

/// Run the adaptive algorithm for `n_iters` iterations (or until the error
/// floor is hit) and track errors against the exact solution.
///
/// Replication streams are derived from `(seed, iteration, start, rep)`, so
/// traces are bit-reproducible and iterations can be re-run in isolation.
pub fn run_adaptive(
    model: &MarkovRewardModel,
    fit: &FitSpec,
    init: &ValueFunction,
    config: &AdaptiveConfig,
) -> Result<AdaptiveTrace> {
    let AdaptiveConfig {
        replications,
        n_iters,
        seed,
        max_steps,
        clamp,
    } = *config;
    if replications == 0 || n_iters == 0 {
        return Err(Error::Domain("replications and n_iters must be at least 1".into()));
    }
    if !init.is_positive_on_transient(model) {
        return Err(Error::Assumption(
            "initial estimate must be strictly positive on transient states".into(),
        ));
    }
    let mu = solve_mu(model)?;
    let design = fit.design_states(model).to_vec();
    if design.is_empty() || design.iter().any(|&x| model.is_absorbing(x)) {
        return Err(Error::Domain("design states must be transient and nonempty".into()));
    }

    let mut iterates = vec![init.clone()];
    let mut sup_errors = vec![init.sup_diff(&mu, model)];
    let mut sample_vars = Vec::new();
    let mut censored = Vec::new();
    let mut flagged = Vec::new();

    let mut current = init.clone();
    for n in 0..n_iters {
        if *sup_errors.last().unwrap() <= ERROR_FLOOR {
            break;
        }
        let tilted = TiltedModel::build(model, &current)?;
        let iter_seed = derive_seed(seed, &[ADAPT_TAG, n as u64]);
        let mut ybar = Vec::with_capacity(design.len());
        let mut max_var = 0.0_f64;
        let mut censored_here = 0;
        let mut all_censored = true;
        for &x in &design {
            let est = estimate_mu(&tilted, x, replications, iter_seed, max_steps)?;
            max_var = max_var.max(est.sample_variance / replications as f64);
            censored_here += est.censored;
            all_censored &= est.censored == replications;
            ybar.push(est.mean);
        }
        sample_vars.push(max_var);
        censored.push(censored_here);
        flagged.push(all_censored);
        if !all_censored {
            current = fit_values(model, &ybar, fit, clamp)?;
        }
        iterates.push(current.clone());
        sup_errors.push(current.sup_diff(&mu, model));
    }

    Ok(AdaptiveTrace {
        iterates,
        sup_errors,
        sample_vars,
        censored,
        flagged,
        theta_hat: None,
        config: *config,
        mode: fit.label().to_string(),
    })
}

/// Fit the empirical convergence rate from a recorded error sequence.
///
/// Ordinary least squares of `log(error)` on the iteration index over the
/// post-burn-in window, truncated at the first error under the fit floor;
/// the rate is `exp(-slope)`, above 1 for geometrically decreasing errors.
pub fn estimate_rate_from_errors(errors: &[f64], burn_in: usize) -> Result<f64> {
    if burn_in >= errors.len() {
        return Err(Error::Estimation("burn-in swallows the whole trace".into()));
    }
    let window: Vec<f64> = errors[burn_in..]
        .iter()
        .copied()
        .take_while(|e| *e > RATE_FIT_FLOOR)
        .collect();
    if window.len() < 4 {
        return Err(Error::Estimation(format!(
            "rate fit needs at least 4 usable iterations, found {}",
            window.len()
        )));
    }
    let n = window.len() as f64;
    let t_mean = (window.len() - 1) as f64 / 2.0;
    let y: Vec<f64> = window.iter().map(|e| e.ln()).collect();
    let y_mean = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, yv) in y.iter().enumerate() {
        let dt = t as f64 - t_mean;
        num += dt * (yv - y_mean);
        den += dt * dt;
    }
    let slope = num / den;
    Ok((-slope).exp())
}

/// Fit the rate from a trace (see [`estimate_rate_from_errors`]).
pub fn estimate_rate(trace: &AdaptiveTrace, burn_in: usize) -> Result<f64> {
    estimate_rate_from_errors(&trace.sup_errors, burn_in)
}

/// Measured and predicted one-iteration error contraction at a tilt.
#[derive(Debug, Clone)]
pub struct ContractionDiagnostic {
    /// Monte Carlo estimate of `E[||update - mu||^2] / ||nu - mu||^2`.
    pub ratio: f64,
    /// Deterministic bound `sum_x Var(Y_nu, x) / (R ||nu - mu||^2)` from the
    /// exact second moments.
    pub bound: f64,
    /// The perturbation size `||nu - mu||` the diagnostic ran at.
    pub distance: f64,
}

/// Estimate the one-iteration variance contraction factor at `nu`.
///
/// Runs `trials` independent single tabular updates from `nu` and compares
/// the mean squared error of the updates with the squared distance of `nu`
/// itself. At the exact value function the factor is zero; nearby it
/// stabilises because both variance and squared distance scale
/// quadratically with the perturbation.
#[allow(clippy::too_many_arguments)]
pub fn contraction_diagnostic(
    model: &MarkovRewardModel,
    nu: &ValueFunction,
    replications: usize,
    trials: usize,
    seed: u64,
    clamp: (f64, f64),
    max_steps: usize,
) -> Result<ContractionDiagnostic> {
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let mu = solve_mu(model)?;
    let distance = nu.sup_diff(&mu, model);
    if distance == 0.0 {
        return Ok(ContractionDiagnostic {
            ratio: 0.0,
            bound: 0.0,
            distance,
        });
    }

    let moments = exact_moments(model, nu)?;
    let mut bound = 0.0;
    for &x in model.transient() {
        let var = moments.variance(x).ok_or_else(|| {
            Error::Numerical("infinite variance under this tilt".into())
        })?;
        bound += var / replications as f64;
    }
    bound /= distance * distance;

    let tilted = TiltedModel::build(model, nu)?;
    let mut total = 0.0;
    for trial in 0..trials {
        let trial_seed = derive_seed(seed, &[CONTRACTION_TAG, trial as u64]);
        let mut ybar = Vec::with_capacity(model.transient().len());
        for &x in model.transient() {
            let est = estimate_mu(&tilted, x, replications, trial_seed, max_steps)?;
            ybar.push(est.mean);
        }
        let update = fit_values(model, &ybar, &FitSpec::Tabular, clamp)?;
        let err = update.sup_diff(&mu, model);
        total += err * err;
    }
    Ok(ContractionDiagnostic {
        ratio: total / trials as f64 / (distance * distance),
        bound,
        distance,
    })
}

/// Fraction of `trials` in which two iterations starting from `nu` land
/// within `eps` of the exact value function (sup norm).
#[allow(clippy::too_many_arguments)]
pub fn two_step_hit_rate(
    model: &MarkovRewardModel,
    fit: &FitSpec,
    nu: &ValueFunction,
    eps: f64,
    replications: usize,
    trials: usize,
    seed: u64,
    clamp: (f64, f64),
    max_steps: usize,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Domain("trials must be at least 1".into()));
    }
    let mut hits = 0usize;
    for trial in 0..trials {
        let trial_seed = derive_seed(seed, &[CONTRACTION_TAG, 0x32, trial as u64]);
        let config = AdaptiveConfig {
            replications,
            n_iters: 2,
            seed: trial_seed,
            max_steps,
            clamp,
        };
        let trace = run_adaptive(model, fit, nu, &config)?;
        if trace.final_sup_error() < eps {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}
