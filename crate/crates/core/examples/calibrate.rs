//! Calibration pilot: reproduces every statistical threshold frozen in the
//! acceptance suite and documented in `docs/calibration.md`.
//!
//! Run with `cargo run --release -p zvsim --example calibrate`. Pass
//! `--emit-data <dir>` to also regenerate the shipped five-state model and
//! its adapt config under `<dir>/models` and `<dir>/configs`.

use std::time::Instant;

use zvsim::adaptive::{estimate_rate, run_adaptive, BasisModel, FitSpec};
use zvsim::eigen::{run_eigen_adaptive, EigenConfig, EigenModel};
use zvsim::exact::solve_mu;
use zvsim::halving::{classify_experiment, HalvingChainSpec};
use zvsim::model::compute_constants;
use zvsim::model::fixtures::{random_model, two_state};
use zvsim::{MarkovRewardModel, ValueFunction};

fn quantiles(mut values: Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    (values[0], values[(n - 1) / 2], values[n - 1])
}

fn adaptive_pilot(
    label: &str,
    model: &MarkovRewardModel,
    fit: &FitSpec,
    replications: usize,
    n_iters: usize,
) {
    let mu = solve_mu(model).unwrap();
    let clamp = (0.5 * mu.min_transient(model), 2.0 * mu.max_transient(model));
    let constants = compute_constants(model, &mu, clamp.0, clamp.1, None).unwrap();
    let init = ValueFunction::constant(model, 1.0);
    let mut finals = Vec::new();
    let mut thetas = Vec::new();
    let mut below_1e2 = 0;
    let mut theta_above_1 = 0;
    for seed in 0..20u64 {
        let trace = run_adaptive(
            model,
            fit,
            &init,
            replications,
            n_iters,
            seed,
            constants.default_max_steps(),
            clamp,
        )
        .unwrap();
        let theta = estimate_rate(&trace, 0).unwrap_or(f64::NAN);
        if trace.final_sup_error() < 1e-2 {
            below_1e2 += 1;
        }
        if theta > 1.0 {
            theta_above_1 += 1;
        }
        finals.push(trace.final_sup_error());
        thetas.push(theta);
    }
    let (fmin, fmed, fmax) = quantiles(finals);
    let (tmin, tmed, tmax) = quantiles(thetas);
    println!("\n## Adaptive pilot: {label} (R = {replications}, {n_iters} iterations, seeds 0..20)");
    println!("- final sup error min/median/max: {fmin:.2e} / {fmed:.2e} / {fmax:.2e}");
    println!("- fitted rate min/median/max:     {tmin:.2} / {tmed:.2} / {tmax:.2}");
    println!("- seeds with final error < 1e-2:  {below_1e2}/20");
    println!("- seeds with fitted rate > 1:     {theta_above_1}/20");
}

fn five_state() -> (MarkovRewardModel, FitSpec) {
    let model = random_model(700, 5);
    let mu = solve_mu(&model).unwrap();
    let basis = FitSpec::Basis(BasisModel {
        design_states: model.transient().to_vec(),
        offset: vec![0.0; model.n_states()],
        columns: vec![
            ValueFunction::constant(&model, 1.0).as_slice().to_vec(),
            mu.as_slice().to_vec(),
        ],
    });
    (model, basis)
}

fn eigen_pilot() {
    let model = EigenModel::new(vec![vec![0.3, 0.4], vec![0.5, 0.2]]).unwrap();
    let mut errors = Vec::new();
    let mut within = 0;
    for seed in 0..20u64 {
        let config = EigenConfig {
            replications: 10_000,
            n_iters: 10,
            seed,
            alpha_max: None,
            max_steps: 100_000,
            clamp: None,
        };
        let trace = run_eigen_adaptive(&model, &[0.5], &config).unwrap();
        let err = trace.rows.last().unwrap().alpha_error;
        if err <= 5e-3 {
            within += 1;
        }
        errors.push(err);
    }
    let (emin, emed, emax) = quantiles(errors);
    println!("\n## Eigen pilot: 2x2 model, init 0.5, R = 10^4, 10 iterations, seeds 0..20");
    println!("- |alpha error| min/median/max: {emin:.2e} / {emed:.2e} / {emax:.2e}");
    println!("- seeds within 5e-3:            {within}/20");
}

fn halving_pilot() {
    let steps = 100_000;
    let n_runs = 100;
    for spec in [HalvingChainSpec::Divergent, HalvingChainSpec::Summable] {
        let summary = classify_experiment(&spec, steps, n_runs, 909);
        let visits: Vec<f64> = summary.runs.iter().map(|r| r.visits_to_one as f64).collect();
        let (vmin, vmed, vmax) = quantiles(visits);
        println!(
            "\n## Halving pilot: {} profile ({} runs x {} steps, master seed 909)",
            summary.label, n_runs, steps
        );
        println!("- visits min/median/max:      {vmin} / {vmed} / {vmax}");
        println!("- mean visits:                {:.2}", summary.mean_visits);
        println!(
            "- fraction with >= 5 visits:  {:.2}",
            summary.fraction_with_visits_at_least(5)
        );
        println!(
            "- fraction with <= 3 visits:  {:.2}",
            summary.fraction_with_visits_at_most(3)
        );
        println!("- median final level:         {}", summary.median_final_level);
    }
}

fn emit_data(dir: &str) {
    let (model, fit) = five_state();
    let model_path = format!("{dir}/models/random5.json");
    std::fs::write(&model_path, model.to_json_string()).unwrap();
    println!("wrote {model_path}");
    if let FitSpec::Basis(basis) = &fit {
        let config = serde_json::json!({
            "mode": "adapt",
            "seed": 0,
            "model_path": "data/models/random5.json",
            "r": 4000,
            "n_iters": 20,
            "basis": {
                "design_states": basis.design_states,
                "offset": basis.offset,
                "columns": basis.columns,
            }
        });
        let config_path = format!("{dir}/configs/adapt_random5.json");
        std::fs::write(&config_path, format!("{:#}\n", config)).unwrap();
        println!("wrote {config_path}");
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if let Some(pos) = args.iter().position(|a| a == "--emit-data") {
        let dir = args.get(pos + 1).expect("--emit-data needs a directory");
        emit_data(dir);
        return;
    }

    let started = Instant::now();
    println!("# Calibration pilot (deterministic; seeds fixed below)");

    adaptive_pilot("two-state fixture, tabular", &two_state(), &FitSpec::Tabular, 1_000, 20);
    let (model5, basis5) = five_state();
    adaptive_pilot("five-state seeded model, rank-2 basis", &model5, &basis5, 4_000, 20);
    eigen_pilot();
    halving_pilot();

    println!("\n(total pilot time {:?})", started.elapsed());
}
