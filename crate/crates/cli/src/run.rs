//! Mode dispatch: load inputs, run the experiment, write trace CSV and
//! summary JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use zvsim::adaptive::{estimate_rate, run_adaptive, BasisModel, FitSpec};
use zvsim::eigen::{run_eigen_adaptive, EigenConfig, EigenModel};
use zvsim::exact::solve_mu;
use zvsim::halving::{classify_experiment, HalvingChainSpec};
use zvsim::model::{compute_constants, MarkovRewardModel};
use zvsim::tilt::{simulate_replication, TiltedModel};
use zvsim::ValueFunction;

use crate::config::{ExperimentConfig, Mode};

/// Runner errors, split by exit code: configuration and input problems exit
/// with 2, numerical or statistical failures with 3.
#[derive(Debug)]
pub enum RunError {
    Config(String),
    Failure(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Failure(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Config(m) | RunError::Failure(m) => m,
        }
    }
}

impl From<zvsim::Error> for RunError {
    fn from(e: zvsim::Error) -> Self {
        match e {
            zvsim::Error::InvalidModel(_) | zvsim::Error::Domain(_) => {
                RunError::Config(e.to_string())
            }
            _ => RunError::Failure(e.to_string()),
        }
    }
}

type RunResult<T> = Result<T, RunError>;

fn read_file(path: &str) -> RunResult<String> {
    fs::read_to_string(path)
        .map_err(|e| RunError::Config(format!("cannot read `{path}`: {e}")))
}

fn load_model(config: &ExperimentConfig) -> RunResult<MarkovRewardModel> {
    let path = config.model_path.as_deref().expect("validated");
    let model = MarkovRewardModel::from_json_str(&read_file(path)?)?;
    let violations = model.validate();
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(RunError::Config(format!(
            "model `{path}` invalid: {}",
            lines.join("; ")
        )));
    }
    Ok(model)
}

/// Default tilting box around the exact value function.
fn default_box(model: &MarkovRewardModel, mu: &ValueFunction) -> (f64, f64) {
    (0.5 * mu.min_transient(model), 2.0 * mu.max_transient(model))
}

/// Simulation step cap: configured, or derived from the geometric
/// domination constant of a box wide enough for both the clamp and the
/// exact value function.
fn derive_max_steps(
    config: &ExperimentConfig,
    model: &MarkovRewardModel,
    mu: &ValueFunction,
    extra: Option<(f64, f64)>,
) -> RunResult<usize> {
    if let Some(ms) = config.max_steps {
        return Ok(ms);
    }
    let (mut lo, mut hi) = default_box(model, mu);
    if let Some((a, b)) = extra {
        lo = lo.min(a);
        hi = hi.max(b);
    }
    let constants = compute_constants(model, mu, lo, hi, config.m_max)?;
    Ok(constants.default_max_steps())
}

struct ModeOutput {
    trace_csv: String,
    metrics: Value,
    censored_total: usize,
}

fn run_solve(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let model = load_model(config)?;
    let mu = solve_mu(&model)?;
    let mut csv = String::from("state,mu\n");
    for &x in model.transient() {
        writeln!(csv, "{x},{}", mu.get(x)).unwrap();
    }
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: json!({ "mu": mu.transient_values(&model) }),
        censored_total: 0,
    })
}

fn run_constants(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let model = load_model(config)?;
    let mu = solve_mu(&model)?;
    let (lo, hi) = match config.box_bounds {
        Some([a, b]) => (a, b),
        None => default_box(&model, &mu),
    };
    let constants = compute_constants(&model, &mu, lo, hi, config.m_max)?;
    let mut csv = String::from(
        "reward_sup,beta_sup,beta_inf,value_min,value_max,box_min,box_max,horizon,horizon_reward,lr_lower,lr_upper,geo_rate\n",
    );
    writeln!(
        csv,
        "{},{},{},{},{},{},{},{},{},{},{},{}",
        constants.reward_sup,
        constants.beta_sup,
        constants.beta_inf,
        constants.value_min,
        constants.value_max,
        constants.box_min,
        constants.box_max,
        constants.horizon,
        constants.horizon_reward,
        constants.lr_lower,
        constants.lr_upper,
        constants.geo_rate,
    )
    .unwrap();
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: serde_json::to_value(&constants).unwrap(),
        censored_total: 0,
    })
}

fn run_simulate(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let model = load_model(config)?;
    let mu = solve_mu(&model)?;
    let x0 = config.x0.expect("validated");
    let r = config.r.expect("validated");
    let nu = match &config.nu {
        Some(values) => ValueFunction::from_transient(&model, values)?,
        None => mu.clone(),
    };
    let extra = (nu.min_transient(&model), nu.max_transient(&model));
    let max_steps = derive_max_steps(config, &model, &mu, Some(extra))?;
    let tilted = TiltedModel::build(&model, &nu)?;

    let mut csv = String::from("rep_index,x0,tau,y_value,log_L_tau,censored\n");
    let mut values = Vec::with_capacity(r);
    let mut censored_total = 0usize;
    for rep in 0..r as u64 {
        let t = simulate_replication(&tilted, x0, config.seed, rep, max_steps)?;
        let censored = t.is_censored();
        censored_total += censored as usize;
        match t.tau {
            Some(tau) => writeln!(
                csv,
                "{rep},{x0},{tau},{},{},0",
                t.y_value,
                t.final_log_lr()
            )
            .unwrap(),
            None => writeln!(csv, "{rep},{x0},,{},{},1", t.y_value, t.final_log_lr()).unwrap(),
        }
        values.push(t.y_value);
    }
    let mean = values.iter().sum::<f64>() / r as f64;
    let variance = if r > 1 {
        values.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (r as f64 - 1.0)
    } else {
        0.0
    };
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: json!({
            "mean": mean,
            "sample_variance": variance,
            "censored": censored_total,
            "exact_mu_x0": mu.get(x0),
        }),
        censored_total,
    })
}

fn build_fit_spec(config: &ExperimentConfig, model: &MarkovRewardModel) -> RunResult<FitSpec> {
    match &config.basis {
        None => Ok(FitSpec::Tabular),
        Some(spec) => {
            let n = model.n_states();
            if spec.offset.len() != n {
                return Err(RunError::Config(format!(
                    "basis offset has {} entries, model has {n} states",
                    spec.offset.len()
                )));
            }
            for (j, column) in spec.columns.iter().enumerate() {
                if column.len() != n {
                    return Err(RunError::Config(format!(
                        "basis column {j} has {} entries, model has {n} states",
                        column.len()
                    )));
                }
            }
            if spec
                .design_states
                .iter()
                .any(|&x| x >= n || model.is_absorbing(x))
            {
                return Err(RunError::Config(
                    "basis design states must be transient model states".into(),
                ));
            }
            Ok(FitSpec::Basis(BasisModel {
                design_states: spec.design_states.clone(),
                offset: spec.offset.clone(),
                columns: spec.columns.clone(),
            }))
        }
    }
}

fn run_adapt(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let model = load_model(config)?;
    let mu = solve_mu(&model)?;
    let fit = build_fit_spec(config, &model)?;
    let clamp = match config.clamp {
        Some([lo, hi]) => (lo, hi),
        None => default_box(&model, &mu),
    };
    let init = match &config.init {
        Some(values) => ValueFunction::from_transient(&model, values)?,
        None => ValueFunction::constant(&model, 1.0).clamped(&model, clamp.0, clamp.1),
    };
    let max_steps = derive_max_steps(config, &model, &mu, Some(clamp))?;
    let trace = run_adaptive(
        &model,
        &fit,
        &init,
        config.r.expect("validated"),
        config.n_iters.expect("validated"),
        config.seed,
        max_steps,
        clamp,
    )?;
    let theta = estimate_rate(&trace, 0).ok();

    let mut csv = String::from("iter,sup_error,max_sample_var,censored_total\n");
    for (i, err) in trace.sup_errors.iter().enumerate() {
        if i == 0 {
            writeln!(csv, "0,{err},,").unwrap();
        } else {
            writeln!(
                csv,
                "{i},{err},{},{}",
                trace.sample_vars[i - 1],
                trace.censored[i - 1]
            )
            .unwrap();
        }
    }
    let censored_total = trace.censored_total();
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: json!({
            "final_sup_error": trace.final_sup_error(),
            "theta_hat": theta,
            "iterations": trace.sup_errors.len() - 1,
            "mode": trace.config.mode,
        }),
        censored_total,
    })
}

fn run_eigen(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let path = config.model_path.as_deref().expect("validated");
    let model = EigenModel::from_json_str(&read_file(path)?)?;
    let init = match &config.init {
        Some(values) => {
            if values.len() != model.d() {
                return Err(RunError::Config(format!(
                    "init has {} entries, eigen model has d = {}",
                    values.len(),
                    model.d()
                )));
            }
            values.clone()
        }
        None => vec![1.0; model.d()],
    };
    let eigen_config = EigenConfig {
        replications: config.r.expect("validated"),
        n_iters: config.n_iters.expect("validated"),
        seed: config.seed,
        alpha_max: config.alpha_max,
        max_steps: config.max_steps.unwrap_or(100_000),
        clamp: config.clamp.map(|[lo, hi]| (lo, hi)),
    };
    let trace = run_eigen_adaptive(&model, &init, &eigen_config)?;

    // Censored cycles abort the run, so completed traces always report zero.
    let mut csv = String::from("iter,alpha_hat,alpha_err,nu_sup_err,censored\n");
    for (i, row) in trace.rows.iter().enumerate() {
        writeln!(
            csv,
            "{i},{},{},{},0",
            row.alpha_hat, row.alpha_error, row.nu_sup_error
        )
        .unwrap();
    }
    let last = trace.rows.last().expect("n_iters >= 1");
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: json!({
            "lambda_pf": trace.oracle.lambda_pf,
            "alpha_star": trace.oracle.alpha_star,
            "alpha_hat": last.alpha_hat,
            "alpha_err": last.alpha_error,
            "nu_sup_err": last.nu_sup_error,
        }),
        censored_total: 0,
    })
}

fn run_counterexample(config: &ExperimentConfig) -> RunResult<ModeOutput> {
    let spec = match config.spec.as_deref().expect("validated") {
        "divergent" => HalvingChainSpec::Divergent,
        "summable" => HalvingChainSpec::Summable,
        other => {
            return Err(RunError::Config(format!("unknown profile `{other}`")));
        }
    };
    let summary = classify_experiment(
        &spec,
        config.steps.expect("validated"),
        config.n_runs.expect("validated"),
        config.seed,
    );
    let mut csv = String::from("run_index,visits_to_one,min_level,final_level\n");
    for run in &summary.runs {
        writeln!(
            csv,
            "{},{},{},{}",
            run.run_index, run.visits_to_one, run.deepest_level, run.final_level
        )
        .unwrap();
    }
    Ok(ModeOutput {
        trace_csv: csv,
        metrics: json!({
            "label": summary.label,
            "mean_visits": summary.mean_visits,
            "median_final_level": summary.median_final_level,
            "fraction_with_at_least_5_visits": summary.fraction_with_visits_at_least(5),
            "fraction_with_at_most_3_visits": summary.fraction_with_visits_at_most(3),
            "note": summary.note,
        }),
        censored_total: 0,
    })
}

/// Run one experiment and write `trace.csv` and `summary.json` into
/// `out_dir`. Returns the summary.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> RunResult<Value> {
    config.validate().map_err(RunError::Config)?;
    let started = Instant::now();
    let output = match config.mode {
        Mode::Solve => run_solve(config)?,
        Mode::Constants => run_constants(config)?,
        Mode::Simulate => run_simulate(config)?,
        Mode::Adapt => run_adapt(config)?,
        Mode::Eigen => run_eigen(config)?,
        Mode::Counterexample => run_counterexample(config)?,
    };
    let wall_ms = started.elapsed().as_millis() as u64;

    fs::create_dir_all(out_dir)
        .map_err(|e| RunError::Config(format!("cannot create `{}`: {e}", out_dir.display())))?;
    let trace_path = out_dir.join("trace.csv");
    fs::write(&trace_path, &output.trace_csv)
        .map_err(|e| RunError::Config(format!("cannot write `{}`: {e}", trace_path.display())))?;

    let summary = json!({
        "mode": config.mode.as_str(),
        "config": serde_json::to_value(config).unwrap(),
        "build": { "name": "zvsim", "version": env!("CARGO_PKG_VERSION") },
        "wall_ms": wall_ms,
        "censored_total": output.censored_total,
        "metrics": output.metrics,
    });
    let summary_path = out_dir.join("summary.json");
    fs::write(&summary_path, format!("{:#}\n", summary))
        .map_err(|e| RunError::Config(format!("cannot write `{}`: {e}", summary_path.display())))?;
    Ok(summary)
}

/// Resolve the output directory for a run: CLI flag, then config field, then
/// a default.
pub fn resolve_out_dir(
    cli_out: Option<&Path>,
    config: &ExperimentConfig,
    default: &str,
) -> PathBuf {
    if let Some(path) = cli_out {
        return path.to_path_buf();
    }
    if let Some(path) = &config.output_path {
        return PathBuf::from(path);
    }
    PathBuf::from(default)
}
