//! Compares the linear-programming optimum with an exhaustive grid search over
//! stationary policies, for the reciprocal model with an expensive first
//! control.

use csense::{brute_force_policy, evaluate_policy, load_model, solve_policy};

fn main() {
    let model = load_model(include_str!("../data/example_reciprocal_costly_alpha.json")).unwrap();
    for i in 0..model.num_hypotheses() {
        let lp = solve_policy(&model, i).unwrap();
        let check = evaluate_policy(&model, i, &lp.q_star).unwrap();
        println!("hypothesis {i}: LP d* = {:.9} (re-evaluated {check:.9})", lp.d_star);
        for steps in [1, 2, 5, 10, 20] {
            let (policy, value) = brute_force_policy(&model, i, steps).unwrap();
            println!(
                "  grid {steps:>2}: {value:.9}  gap {:.2e}  rows {:.3?}",
                lp.d_star - value,
                policy.to_vecs()
            );
        }
    }
}
