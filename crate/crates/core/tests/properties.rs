//! Property tests for the structural invariants that must hold on every
//! admissible input, not just the hand-picked fixtures.

use proptest::prelude::*;

use zvsim::adaptive::{estimate_rate_from_errors, fit_values, FitSpec};
use zvsim::exact::{exact_moments, solve_mu};
use zvsim::halving::{simulate_coupled, HalvingChainSpec};
use zvsim::model::fixtures::random_model;
use zvsim::streams::derive_rng;
use zvsim::tilt::TiltedModel;
use zvsim::ValueFunction;

use rand::Rng;

fn random_tilt(model: &zvsim::MarkovRewardModel, seed: u64, lo: f64, hi: f64) -> ValueFunction {
    let mut rng = derive_rng(seed, &[0x70726f70]);
    ValueFunction::from_fn(model, |_| rng.gen_range(lo..hi))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// The tilted kernel is a change of measure: rows renormalize to 1 and
    /// `q * l` restores the base transition wherever mass survives.
    #[test]
    fn tilt_is_change_of_measure(seed in 0u64..5_000, n in 1usize..7, nu_seed in 0u64..1_000) {
        let model = random_model(seed, n);
        let mu = solve_mu(&model).unwrap();
        let nu = random_tilt(&model, nu_seed, 0.5 * mu.min_transient(&model), 2.0 * mu.max_transient(&model));
        let tilted = TiltedModel::build(&model, &nu).unwrap();
        for &x in model.transient() {
            let row: f64 = (0..model.n_states()).map(|y| tilted.q(x, y)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            for y in 0..model.n_states() {
                if model.s(x, y) + nu.get(y) > 0.0 {
                    prop_assert!((tilted.q(x, y) * tilted.likelihood_ratio(x, y) - model.p(x, y)).abs() < 1e-12);
                }
            }
        }
    }

    /// Unbiasedness of the filtered estimator, in its deterministic form:
    /// the exact mean under any admissible tilt is the exact value function.
    #[test]
    fn filtered_estimator_is_unbiased(seed in 0u64..5_000, n in 1usize..7, nu_seed in 0u64..1_000) {
        let model = random_model(seed, n);
        let mu = solve_mu(&model).unwrap();
        let nu = random_tilt(&model, nu_seed, 0.5 * mu.min_transient(&model), 2.0 * mu.max_transient(&model));
        let moments = exact_moments(&model, &nu).unwrap();
        prop_assert!(moments.mean.sup_diff(&mu, &model) < 1e-10);
    }

    /// Fitted iterates always land inside the clamp box.
    #[test]
    fn fitted_values_respect_the_box(
        seed in 0u64..5_000,
        n in 1usize..7,
        raw in proptest::collection::vec(0.0f64..50.0, 6),
        lo in 0.01f64..2.0,
        width in 0.0f64..10.0,
    ) {
        let model = random_model(seed, n);
        let ybar: Vec<f64> = model.transient().iter().enumerate().map(|(i, _)| raw[i % raw.len()]).collect();
        let hi = lo + width;
        let fitted = fit_values(&model, &ybar, &FitSpec::Tabular, (lo, hi)).unwrap();
        for &x in model.transient() {
            prop_assert!((lo..=hi).contains(&fitted.get(x)));
        }
    }

    /// The rate estimator inverts exact geometric decay.
    #[test]
    fn rate_estimator_inverts_geometric_decay(theta in 1.05f64..50.0, e0 in 0.01f64..100.0, len in 4usize..12) {
        let errors: Vec<f64> = (0..len).map(|n| e0 * theta.powi(-(n as i32))).collect();
        let fitted = estimate_rate_from_errors(&errors, 0).unwrap();
        prop_assert!((fitted - theta).abs() <= 1e-6 * theta);
    }

    /// Common-random-number coupling: a pointwise larger, level-nonincreasing
    /// jump profile never returns less often.
    #[test]
    fn halving_coupling_is_monotone(seed in 0u64..2_000, pair in 0usize..3) {
        fn halved_divergent(level: u64) -> f64 {
            if level == 0 { 0.25 } else { 0.5 / (level as f64 + 1.0) }
        }
        fn fast_geometric(level: u64) -> f64 {
            0.4 * 0.5f64.powi(level.min(1_000) as i32)
        }
        let pairs: [(HalvingChainSpec, HalvingChainSpec); 3] = [
            (HalvingChainSpec::Divergent, HalvingChainSpec::Summable),
            (
                HalvingChainSpec::Divergent,
                HalvingChainSpec::Custom { label: "halved", p: halved_divergent },
            ),
            (
                HalvingChainSpec::Custom { label: "geometric", p: fast_geometric },
                HalvingChainSpec::Summable,
            ),
        ];
        let (upper, lower) = &pairs[pair];
        let (hi, lo) = simulate_coupled(upper, lower, 3_000, seed);
        prop_assert!(hi.visits_to_one >= lo.visits_to_one);
    }
}
