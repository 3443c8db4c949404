//! Controlled-sensing sequential multihypothesis testing.
//!
//! A decision maker observes a controlled Markov chain whose transition law
//! depends on an unknown hypothesis `i ∈ {0, …, M−1}`. Each step it picks a
//! control `u` (paying `c(u)`), sees the next observation, and eventually
//! stops and declares a hypothesis. This crate provides:
//!
//! - [`model`]: ingestion and validation of the observation model.
//! - [`divergence`]: KL divergences, mixed kernels, stationary distributions.
//! - [`solver`]: the optimal cost-normalized sensing policy for each
//!   hypothesis, via an occupation-measure linear program, plus a brute-force
//!   grid oracle.
//! - [`controller`]: the self-tuning explore/exploit controller.
//! - [`testbench`]: single sequential trials with threshold stopping.
//! - [`harness`]: reproducible parallel Monte Carlo campaigns and sweeps.
//! - [`cli`]: the `csense` command-line front end.
//!
//! ```
//! use csense::{load_model, PolicySolution};
//!
//! let model = load_model(include_str!("../data/example_reciprocal.json")).unwrap();
//! let solution = PolicySolution::solve(&model).unwrap();
//! let eps: f64 = 0.1;
//! let golden = (1.0 - 2.0 * eps) * ((1.0 - eps) / eps).ln();
//! assert!((solution.d_star(0) - golden).abs() < 1e-9);
//! ```

// NaN must fail range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod controller;
pub mod divergence;
pub mod harness;
pub mod model;
pub mod solver;
pub mod testbench;

pub use controller::{ControllerState, ExplorationSchedule, DEFAULT_EXPLORATION};
pub use divergence::{kl_divergence, mixed_kernel, stationary_distribution, ConditionalPolicy, Distribution};
pub use harness::{compute_stats, run_experiment, threshold_sweep, Experiment, RunStats, SweepTable};
pub use model::{load_model, validate_model, Model, ModelError, RawModel};
pub use solver::{brute_force_policy, evaluate_policy, solve_policy, HypothesisPolicy, PolicySolution};
pub use testbench::{run_trial, run_unstopped, StoppingRule, TrialRecord, DEFAULT_MAX_STEPS};
