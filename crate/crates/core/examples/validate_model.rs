//! Loads a model file and reports either its dimensions or every violated
//! invariant.
//!
//! ```text
//! cargo run --example validate_model -- crates/core/data/example_reciprocal.json
//! ```

use csense::model::{load_model, ModelError};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/data/example_reciprocal.json").into());
    let text = std::fs::read_to_string(&path).expect("readable model file");
    match load_model(&text) {
        Ok(model) => {
            println!(
                "{path}: {} hypotheses, {} observations, {} controls, min cost {}",
                model.num_hypotheses(),
                model.num_observations(),
                model.num_controls(),
                model.min_cost()
            );
        }
        Err(ModelError::Invalid(violations)) => {
            println!("{path}: {} violation(s)", violations.len());
            for v in violations {
                println!("  {v}");
            }
        }
        Err(e) => println!("{path}: {e}"),
    }

    // A broken variant: one row off by 0.05 and a zero cost.
    let mut raw = load_model(&text).unwrap().to_raw();
    raw.kernels[0][0][0][0] += 0.05;
    raw.costs[0] = 0.0;
    if let Err(e) = csense::validate_model(&raw) {
        println!("tampered copy -> {}: {e}", e.class());
    }
}
