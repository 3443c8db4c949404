//! Single-threshold campaign: the worst-case error rate stays below
//! `(M − 1)/T`.

use csense::harness::{run_experiment, Experiment};
use csense::{load_model, PolicySolution, StoppingRule, DEFAULT_EXPLORATION, DEFAULT_MAX_STEPS};

fn main() {
    let model = load_model(include_str!("../data/example_reciprocal.json")).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    for threshold in [10.0, 100.0, 1000.0] {
        let experiment = Experiment {
            rule: StoppingRule::SingleThreshold(threshold),
            exploration: DEFAULT_EXPLORATION,
            trials: 10_000,
            master_seed: 1,
            max_steps: DEFAULT_MAX_STEPS,
        };
        let stats = run_experiment(&model, &solution, &experiment).unwrap();
        let bound = (model.num_hypotheses() - 1) as f64 / threshold;
        println!(
            "T={threshold:>6}: p_max_hat = {:.5} [{:.5}, {:.5}]  bound {bound:.5}  mean N {:.2?}",
            stats.p_max_hat,
            stats.p_max_interval.lo,
            stats.p_max_interval.hi,
            stats.mean_stop_time.iter().map(|m| m.mean.unwrap_or(f64::NAN)).collect::<Vec<_>>()
        );
    }
}
