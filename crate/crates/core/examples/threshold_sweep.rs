//! Sweeps the threshold and writes the normalized-slope table as CSV on
//! stdout. Pass a model path to sweep something other than the reciprocal
//! example.

use csense::harness::threshold_sweep;
use csense::{load_model, PolicySolution, DEFAULT_EXPLORATION, DEFAULT_MAX_STEPS};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/example_reciprocal.json").into());
    let model = load_model(&std::fs::read_to_string(path).unwrap()).unwrap();
    let solution = PolicySolution::solve(&model).unwrap();
    let table = threshold_sweep(
        &model,
        &solution,
        &[1e2, 1e3, 1e4, 1e6, 1e9],
        DEFAULT_EXPLORATION,
        2000,
        3,
        DEFAULT_MAX_STEPS,
    )
    .unwrap();
    table.write_csv(std::io::stdout().lock()).unwrap();
}
