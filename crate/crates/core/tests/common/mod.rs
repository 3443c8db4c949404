#![allow(dead_code)]

use std::path::PathBuf;

use csense::{load_model, Model, RawModel};
use csense::model::{validate_model, ObservationRef};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 0.1;

/// `(1 − 2ε) ln((1 − ε)/ε)` at ε = 0.1.
pub fn reciprocal_divergence() -> f64 {
    (1.0 - 2.0 * EPS) * ((1.0 - EPS) / EPS).ln()
}

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

pub fn data_model(name: &str) -> Model {
    let text = std::fs::read_to_string(data_path(name)).unwrap();
    load_model(&text).unwrap()
}

pub fn reciprocal() -> Model {
    data_model("example_reciprocal.json")
}

/// Random row summing to 1 with every entry at least `floor`.
pub fn random_row(rng: &mut impl Rng, len: usize, floor: f64) -> Vec<f64> {
    let weights: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
    let total: f64 = weights.iter().sum();
    let free = 1.0 - floor * len as f64;
    let mut row: Vec<f64> = weights.iter().map(|w| floor + free * w / total).collect();
    let drift = 1.0 - row.iter().sum::<f64>();
    row[0] += drift;
    row
}

/// Random positive model with kernel entries at least `floor` and costs in `[0.5, 2)`.
pub fn random_model(seed: u64, hypotheses: usize, observations: usize, controls: usize, floor: f64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kernels = (0..hypotheses)
        .map(|_| {
            (0..controls)
                .map(|_| (0..observations).map(|_| random_row(&mut rng, observations, floor)).collect())
                .collect()
        })
        .collect();
    let costs = (0..controls).map(|_| 0.5 + 1.5 * rng.random::<f64>()).collect();
    let raw = RawModel {
        num_hypotheses: hypotheses,
        observations: (0..observations).map(|y| format!("y{y}")).collect(),
        controls: (0..controls).map(|u| format!("u{u}")).collect(),
        y0: Some(ObservationRef::Index(rng.random_range(0..observations))),
        costs,
        kernels,
    };
    validate_model(&raw).unwrap()
}

/// Random model whose shape is also drawn from the seed.
pub fn random_small_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
    let m = rng.random_range(2..=4);
    let ny = rng.random_range(2..=4);
    let nu = rng.random_range(1..=3);
    random_model(seed, m, ny, nu, 0.02)
}
