//! Solves the optimal sensing policy of every hypothesis and prints `d*`,
//! the control rule and the solver residuals.

use csense::{load_model, PolicySolution};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/example_reciprocal.json").into());
    let model = load_model(&std::fs::read_to_string(&path).unwrap()).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    for policy in solution.policies() {
        println!("hypothesis {}: d* = {:.9}", policy.hypothesis, policy.d_star);
        for (prev, row) in policy.q_star.rows().enumerate() {
            let cells: Vec<String> = model
                .control_labels()
                .iter()
                .zip(row)
                .map(|(label, p)| format!("{label}={p:.4}"))
                .collect();
            println!("  after {}: {}", model.observation_labels()[prev], cells.join(" "));
        }
        println!(
            "  control marginal {:.4?}, flow residual {:.1e}, cost residual {:.1e}, pivots {}{}",
            policy.occupation.control_marginal(),
            policy.diagnostics.flow_residual,
            policy.diagnostics.cost_residual,
            policy.diagnostics.iterations,
            if policy.diagnostics.possibly_non_unique { ", optimum may not be unique" } else { "" }
        );
    }
}
