//! Long runs without stopping: the ML estimate locks onto the truth and the
//! realized reward per unit cost approaches `d*` for every hypothesis.

use csense::{load_model, run_unstopped, PolicySolution, DEFAULT_EXPLORATION};

fn main() {
    let model = load_model(include_str!("../data/example_reciprocal_costly_alpha.json")).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    for truth in 0..model.num_hypotheses() {
        for steps in [1_000, 10_000, 100_000] {
            let run = run_unstopped(&model, truth, &solution, DEFAULT_EXPLORATION, 17, steps, steps / 10).unwrap();
            println!(
                "truth {truth} steps {steps:>6}: ML correct {:.4}, reward {:.4} vs d* {:.4}, explorations {}",
                run.ml_correct_fraction(),
                run.running_reward(),
                solution.d_star(truth),
                run.num_explorations
            );
        }
    }
}
