//! Binary test with asymmetric risks `R̄ = (T^{-c}, T^{-1})`.
//!
//! With `c = 2` and `T = 100`, deciding 0 must be 100 times safer than
//! deciding 1, and the expected stopping times scale as `c·ln T / D(p0‖p1)`
//! under 0 and `ln T / D(p1‖p0)` under 1.

use csense::harness::{run_experiment, Experiment};
use csense::{kl_divergence, load_model, PolicySolution, StoppingRule, DEFAULT_EXPLORATION, DEFAULT_MAX_STEPS};

const C: f64 = 2.0;
const T: f64 = 100.0;

fn main() {
    let model = load_model(include_str!("../data/asymmetric_binary.json")).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    let (p0, p1) = (model.kernel_row(0, 0, 0), model.kernel_row(1, 0, 0));
    let d01 = kl_divergence(p0, p1).unwrap();
    let d10 = kl_divergence(p1, p0).unwrap();

    let experiment = Experiment {
        rule: StoppingRule::per_hypothesis(vec![T.powf(-C), 1.0 / T]).unwrap(),
        exploration: DEFAULT_EXPLORATION,
        trials: 20_000,
        master_seed: 2,
        max_steps: DEFAULT_MAX_STEPS,
    };
    let stats = run_experiment(&model, &solution, &experiment).unwrap();
    for (truth, decided, target) in [(1, 0, T.powf(-C)), (0, 1, 1.0 / T)] {
        let ci = stats.error_intervals[truth][decided];
        println!(
            "P_{truth}{{δ={decided}}} = {:.5} [{:.5}, {:.5}] (target {target:.0e})",
            stats.error_matrix[truth][decided], ci.lo, ci.hi
        );
    }
    println!(
        "E_0[N] = {:.2}  (c ln T / D01 = {:.2})",
        stats.mean_stop_time[0].mean.unwrap(),
        C * T.ln() / d01
    );
    println!(
        "E_1[N] = {:.2}  (ln T / D10 = {:.2})",
        stats.mean_stop_time[1].mean.unwrap(),
        T.ln() / d10
    );
}
