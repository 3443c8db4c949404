//! Per-hypothesis thresholds: each decision risk respects its own target.

use csense::harness::{run_experiment, Experiment};
use csense::{load_model, PolicySolution, StoppingRule, DEFAULT_EXPLORATION, DEFAULT_MAX_STEPS};

fn main() {
    let model = load_model(include_str!("../data/example_reciprocal.json")).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    let targets = vec![0.01, 0.02, 0.05];
    let experiment = Experiment {
        rule: StoppingRule::per_hypothesis(targets.clone()).unwrap(),
        exploration: DEFAULT_EXPLORATION,
        trials: 10_000,
        master_seed: 5,
        max_steps: DEFAULT_MAX_STEPS,
    };
    let stats = run_experiment(&model, &solution, &experiment).unwrap();
    for (i, target) in targets.iter().enumerate() {
        let ci = stats.risk_intervals[i];
        println!(
            "R_{i}: {:.4} [{:.4}, {:.4}] target {target}  mean cost under {i}: {:.2}",
            stats.risks[i],
            ci.lo,
            ci.hi,
            stats.mean_cost[i].mean.unwrap()
        );
    }
    println!("error matrix (row = truth):");
    for row in &stats.error_matrix {
        println!("  {row:.4?}");
    }
}
