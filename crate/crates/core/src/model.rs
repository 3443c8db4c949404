//! Controlled Markovian observation model.
//!
//! Under hypothesis `i`, with control `u` applied at step `k` and previous
//! observation `ỹ = y_{k-1}`, the next observation is drawn from the row
//! `p_i^u(· | ỹ)` of a row-stochastic `|Y| × |Y|` kernel. Every kernel entry
//! must be strictly positive; that is what guarantees unique stationary
//! distributions and finite log-likelihood increments everywhere downstream.
//!
//! Models are ingested from JSON of the form
//!
//! ```text
//! {"num_hypotheses": 3,
//!  "observations": ["0", "1"],
//!  "controls": ["alpha", "beta", "gamma"],
//!  "y0": "0",
//!  "costs": [1.0, 1.0, 1.0],
//!  "kernels": [ [ [[0.1, 0.9], [0.1, 0.9]], ... per control ], ... per hypothesis ]}
//! ```
//!
//! with `kernels[i][u][ỹ][y] = p_i^u(y | ỹ)`. `y0` may be a label or an index
//! and defaults to index 0.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on a kernel row sum.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

/// One violated model invariant, with the indices where it was found.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum ValidationError {
    NonStochasticRow {
        hypothesis: usize,
        control: usize,
        prev: usize,
        sum: f64,
    },
    NonPositiveEntry {
        hypothesis: usize,
        control: usize,
        prev: usize,
        next: usize,
        value: f64,
    },
    NonPositiveCost {
        control: usize,
        value: f64,
    },
    BadInitialObservation {
        y0: String,
    },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::NonStochasticRow {
                hypothesis,
                control,
                prev,
                sum,
            } => write!(
                f,
                "kernel row (hypothesis {hypothesis}, control {control}, prev {prev}) sums to {sum}"
            ),
            ValidationError::NonPositiveEntry {
                hypothesis,
                control,
                prev,
                next,
                value,
            } => write!(
                f,
                "kernel entry (hypothesis {hypothesis}, control {control}, prev {prev}, next {next}) = {value} is not positive"
            ),
            ValidationError::NonPositiveCost { control, value } => {
                write!(f, "cost of control {control} = {value} is not positive")
            }
            ValidationError::BadInitialObservation { y0 } => {
                write!(f, "initial observation {y0} is not in the observation alphabet")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    /// Malformed JSON or a field of the wrong type.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// Well-formed JSON whose shape does not describe a model.
    #[error("parse error in `{field}`: {message}")]
    Structure { field: String, message: String },
    /// Every invariant the candidate violates.
    #[error("model violates {} invariant(s): {}", .0.len(), join_errors(.0))]
    Invalid(Vec<ValidationError>),
}

impl ModelError {
    /// Stable class name used in machine-readable error reports.
    pub fn class(&self) -> &'static str {
        match self {
            ModelError::Parse { .. } | ModelError::Structure { .. } => "ParseError",
            ModelError::Invalid(_) => "ValidationError",
        }
    }
}

fn join_errors(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Initial observation given either by label or by index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObservationRef {
    Index(usize),
    Label(String),
}

/// Unvalidated model description, exactly as it appears in a model file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawModel {
    pub num_hypotheses: usize,
    pub observations: Vec<String>,
    pub controls: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<ObservationRef>,
    pub costs: Vec<f64>,
    pub kernels: Vec<Vec<Vec<Vec<f64>>>>,
}

impl RawModel {
    fn check_structure(&self) -> Result<(), ModelError> {
        let structure = |field: String, message: String| ModelError::Structure { field, message };
        if self.num_hypotheses < 2 {
            return Err(structure(
                "num_hypotheses".into(),
                format!("need at least 2 hypotheses, got {}", self.num_hypotheses),
            ));
        }
        if self.observations.is_empty() {
            return Err(structure("observations".into(), "empty alphabet".into()));
        }
        if self.controls.is_empty() {
            return Err(structure("controls".into(), "empty alphabet".into()));
        }
        for (field, labels) in [("observations", &self.observations), ("controls", &self.controls)] {
            let mut seen = HashSet::new();
            for label in labels {
                if !seen.insert(label.as_str()) {
                    return Err(structure(field.into(), format!("duplicate label {label:?}")));
                }
            }
        }
        let (m, nu, ny) = (self.num_hypotheses, self.controls.len(), self.observations.len());
        if self.costs.len() != nu {
            return Err(structure(
                "costs".into(),
                format!("expected {nu} entries (one per control), found {}", self.costs.len()),
            ));
        }
        if self.kernels.len() != m {
            return Err(structure(
                "kernels".into(),
                format!("expected {m} hypotheses, found {}", self.kernels.len()),
            ));
        }
        for (i, per_control) in self.kernels.iter().enumerate() {
            if per_control.len() != nu {
                return Err(structure(
                    format!("kernels[{i}]"),
                    format!("expected {nu} controls, found {}", per_control.len()),
                ));
            }
            for (u, matrix) in per_control.iter().enumerate() {
                if matrix.len() != ny {
                    return Err(structure(
                        format!("kernels[{i}][{u}]"),
                        format!("expected {ny} rows, found {}", matrix.len()),
                    ));
                }
                for (prev, row) in matrix.iter().enumerate() {
                    if row.len() != ny {
                        return Err(structure(
                            format!("kernels[{i}][{u}][{prev}]"),
                            format!("expected {ny} entries, found {}", row.len()),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// A validated controlled Markovian observation model. Immutable.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    num_hypotheses: usize,
    observations: Vec<String>,
    controls: Vec<String>,
    y0: usize,
    costs: Vec<f64>,
    /// Flat `[i][u][prev][next]`.
    kernels: Vec<f64>,
    log_kernels: Vec<f64>,
}

/// Validates a candidate model, collecting every violated invariant.
///
/// Rows whose sums are within [`ROW_SUM_TOLERANCE`] of one are renormalized
/// by their sum, unless they already sum to one up to rounding, so that
/// validating a valid model gives it back unchanged.
pub fn validate_model(candidate: &RawModel) -> Result<Model, ModelError> {
    candidate.check_structure()?;
    let ny = candidate.observations.len();
    let mut errors = Vec::new();

    let mut kernels = Vec::with_capacity(candidate.num_hypotheses * candidate.controls.len() * ny * ny);
    for (i, per_control) in candidate.kernels.iter().enumerate() {
        for (u, matrix) in per_control.iter().enumerate() {
            for (prev, row) in matrix.iter().enumerate() {
                let mut positive = true;
                for (next, &value) in row.iter().enumerate() {
                    // `!(x > 0)` also catches NaN.
                    if !(value > 0.0) {
                        positive = false;
                        errors.push(ValidationError::NonPositiveEntry {
                            hypothesis: i,
                            control: u,
                            prev,
                            next,
                            value,
                        });
                    }
                }
                let sum: f64 = row.iter().sum();
                let deviation = (sum - 1.0).abs();
                if !(deviation <= ROW_SUM_TOLERANCE) {
                    errors.push(ValidationError::NonStochasticRow {
                        hypothesis: i,
                        control: u,
                        prev,
                        sum,
                    });
                }
                if positive && deviation > 4.0 * f64::EPSILON * ny as f64 {
                    kernels.extend(row.iter().map(|v| v / sum));
                } else {
                    kernels.extend_from_slice(row);
                }
            }
        }
    }

    for (u, &value) in candidate.costs.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            errors.push(ValidationError::NonPositiveCost { control: u, value });
        }
    }

    let y0 = match &candidate.y0 {
        None => Some(0),
        Some(ObservationRef::Index(idx)) => (*idx < ny).then_some(*idx),
        Some(ObservationRef::Label(label)) => candidate.observations.iter().position(|o| o == label),
    };
    if y0.is_none() {
        let shown = match &candidate.y0 {
            Some(ObservationRef::Index(idx)) => idx.to_string(),
            Some(ObservationRef::Label(label)) => format!("{label:?}"),
            None => unreachable!(),
        };
        errors.push(ValidationError::BadInitialObservation { y0: shown });
    }

    if !errors.is_empty() {
        return Err(ModelError::Invalid(errors));
    }

    let log_kernels = kernels.iter().map(|p| p.ln()).collect();
    Ok(Model {
        num_hypotheses: candidate.num_hypotheses,
        observations: candidate.observations.clone(),
        controls: candidate.controls.clone(),
        y0: y0.unwrap(),
        costs: candidate.costs.clone(),
        kernels,
        log_kernels,
    })
}

/// Parses a JSON model file and validates it.
pub fn load_model(text: &str) -> Result<Model, ModelError> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| ModelError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    validate_model(&raw)
}

impl Model {
    pub fn num_hypotheses(&self) -> usize {
        self.num_hypotheses
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn observation_labels(&self) -> &[String] {
        &self.observations
    }

    pub fn control_labels(&self) -> &[String] {
        &self.controls
    }

    /// Index of the constant initial observation.
    pub fn y0(&self) -> usize {
        self.y0
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn cost(&self, control: usize) -> f64 {
        self.costs[control]
    }

    pub fn min_cost(&self) -> f64 {
        self.costs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    #[inline]
    fn offset(&self, hypothesis: usize, control: usize, prev: usize) -> usize {
        let ny = self.observations.len();
        ((hypothesis * self.controls.len() + control) * ny + prev) * ny
    }

    /// The distribution `p_i^u(· | prev)`.
    #[inline]
    pub fn kernel_row(&self, hypothesis: usize, control: usize, prev: usize) -> &[f64] {
        let start = self.offset(hypothesis, control, prev);
        &self.kernels[start..start + self.observations.len()]
    }

    /// `p_i^u(next | prev)`.
    #[inline]
    pub fn prob(&self, hypothesis: usize, control: usize, prev: usize, next: usize) -> f64 {
        self.kernels[self.offset(hypothesis, control, prev) + next]
    }

    /// `ln p_i^u(next | prev)`, precomputed.
    #[inline]
    pub fn log_prob(&self, hypothesis: usize, control: usize, prev: usize, next: usize) -> f64 {
        self.log_kernels[self.offset(hypothesis, control, prev) + next]
    }

    /// The kernel `p_i^u` as a dense `|Y| × |Y|` matrix.
    pub fn kernel(&self, hypothesis: usize, control: usize) -> Vec<Vec<f64>> {
        (0..self.num_observations())
            .map(|prev| self.kernel_row(hypothesis, control, prev).to_vec())
            .collect()
    }

    /// Looks up an observation index by label.
    pub fn observation_index(&self, label: &str) -> Option<usize> {
        self.observations.iter().position(|o| o == label)
    }

    /// Looks up a control index by label.
    pub fn control_index(&self, label: &str) -> Option<usize> {
        self.controls.iter().position(|c| c == label)
    }

    /// Same model with a different cost vector.
    pub fn with_costs(&self, costs: Vec<f64>) -> Result<Model, ModelError> {
        let mut raw = self.to_raw();
        raw.costs = costs;
        validate_model(&raw)
    }

    pub fn to_raw(&self) -> RawModel {
        let (m, nu) = (self.num_hypotheses, self.num_controls());
        let kernels = (0..m)
            .map(|i| (0..nu).map(|u| self.kernel(i, u)).collect())
            .collect();
        RawModel {
            num_hypotheses: m,
            observations: self.observations.clone(),
            controls: self.controls.clone(),
            y0: Some(ObservationRef::Label(self.observations[self.y0].clone())),
            costs: self.costs.clone(),
            kernels,
        }
    }

    /// Serializes to the model file format. Floats are written in shortest
    /// round-trip form, so `load_model(&m.to_json())` reproduces `m`.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("model serialization is infallible")
    }
}
