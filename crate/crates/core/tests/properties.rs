mod common;

use csense::harness::compute_stats;
use csense::model::validate_model;
use csense::solver::{occupation_to_policy, OccupationMeasure};
use csense::testbench::TrialRecord;
use csense::{evaluate_policy, load_model, solve_policy, stationary_distribution, mixed_kernel, ConditionalPolicy};
use proptest::prelude::*;

use common::random_small_model;

fn random_policy(ny: usize, nu: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(0.0f64..1.0, nu).prop_map(|w| {
            let total: f64 = w.iter().sum::<f64>() + 1e-9;
            let mut row: Vec<f64> = w.iter().map(|x| x / total).collect();
            let drift = 1.0 - row.iter().sum::<f64>();
            row[0] += drift;
            row
        }),
        ny,
    )
}

fn model_and_policy() -> impl Strategy<Value = (u64, Vec<Vec<f64>>)> {
    any::<u64>().prop_flat_map(|seed| {
        let model = random_small_model(seed);
        (Just(seed), random_policy(model.num_observations(), model.num_controls()))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn validation_is_idempotent_through_json(seed in any::<u64>()) {
        let model = random_small_model(seed);
        let again = load_model(&model.to_json()).unwrap();
        prop_assert_eq!(again.to_json(), model.to_json());
        let twice = validate_model(&again.to_raw()).unwrap();
        prop_assert_eq!(twice.to_raw(), again.to_raw());
    }

    #[test]
    fn optimum_dominates_every_stationary_policy((seed, rows) in model_and_policy()) {
        let model = random_small_model(seed);
        let policy = ConditionalPolicy::new(rows).unwrap();
        for i in 0..model.num_hypotheses() {
            let best = solve_policy(&model, i).unwrap();
            let value = evaluate_policy(&model, i, &policy).unwrap();
            prop_assert!(best.d_star >= value - 1e-9, "{} < {}", best.d_star, value);
            let realized = evaluate_policy(&model, i, &best.q_star).unwrap();
            prop_assert!((realized - best.d_star).abs() <= 1e-8 * (1.0 + best.d_star));
        }
    }

    #[test]
    fn occupation_round_trip((seed, rows) in model_and_policy()) {
        let model = random_small_model(seed);
        let policy = ConditionalPolicy::new(rows).unwrap();
        let mu = stationary_distribution(&mixed_kernel(&model, 0, &policy).unwrap()).unwrap();
        let occupation = OccupationMeasure::from_policy(&mu, &policy);
        prop_assert!(occupation.flow_residual(&model, 0) < 1e-10);
        prop_assert!((occupation.total_mass() - 1.0).abs() < 1e-12);
        let back = occupation_to_policy(&occupation);
        prop_assert!(back.max_abs_diff(&policy) < 1e-9);
    }

    #[test]
    fn risks_never_exceed_worst_case_error(
        m in 2usize..5,
        raw in prop::collection::vec(prop::collection::vec(0usize..6, 1..40), 4),
    ) {
        let groups: Vec<Vec<TrialRecord>> = raw
            .iter()
            .take(m)
            .map(|codes| {
                codes
                    .iter()
                    .map(|&c| TrialRecord {
                        stop_time: 1 + c as u64,
                        decision: (c < m).then_some(c),
                        total_cost: c as f64,
                        num_explorations: 1,
                        last_ml_error_time: 0,
                        censored: c >= m,
                    })
                    .collect()
            })
            .collect();
        let stats = compute_stats(&groups).unwrap();
        for i in 0..m {
            prop_assert!(stats.risks[i] <= stats.p_max_hat + 1e-15);
            let row_sum: f64 = stats.error_matrix[i].iter().sum();
            prop_assert!(row_sum <= 1.0 + 1e-12);
        }
    }
}
