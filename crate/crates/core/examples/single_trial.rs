//! Steps one sequential test by hand and prints the trajectory until the
//! single-threshold rule stops it.

use csense::testbench::{should_stop, ml_gap, Trial};
use csense::{load_model, PolicySolution, StoppingRule, DEFAULT_EXPLORATION};

fn main() {
    let model = load_model(include_str!("../data/example_reciprocal.json")).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    let rule = StoppingRule::single_threshold(1000.0).unwrap();
    let truth = 2;
    let mut trial = Trial::new(&model, &solution, truth, DEFAULT_EXPLORATION, 11).unwrap();
    println!("truth {truth}, threshold ln T = {:.3}", rule.log_threshold(0));
    loop {
        let step = trial.step();
        let (best, gap) = ml_gap(trial.state().loglik());
        println!(
            "k={:>3} u={:<5} {} y={} ML={best} gap={gap:>7.3}",
            step.time,
            model.control_labels()[step.control],
            if step.explored { "explore" } else { "exploit" },
            model.observation_labels()[step.observation],
        );
        if let Some(decision) = should_stop(trial.state().loglik(), &rule) {
            println!("stop at N={} deciding {decision}, cost {}", step.time, trial.total_cost());
            break;
        }
    }
}
