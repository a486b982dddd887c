//! Experiment configuration schema and validation.

use serde::{Deserialize, Serialize};

/// Experiment mode; one per invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Solve,
    Simulate,
    Adapt,
    Eigen,
    Counterexample,
    Constants,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Simulate => "simulate",
            Mode::Adapt => "adapt",
            Mode::Eigen => "eigen",
            Mode::Counterexample => "counterexample",
            Mode::Constants => "constants",
        }
    }
}

/// Linear-basis specification for adapt mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BasisSpec {
    /// Design states (transient state indices).
    pub design_states: Vec<usize>,
    /// Offset values, one per model state.
    pub offset: Vec<f64>,
    /// Basis columns, each one value per model state.
    pub columns: Vec<Vec<f64>>,
}

/// One experiment, as read from a JSON config file.
///
/// All randomness flows from `seed`; no field pulls entropy from the clock or
/// the OS.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Clamp box `[floor, cap]` for fitted iterates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clamp: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<BasisSpec>,
    /// Initial estimate, one value per transient state (adapt) or per
    /// non-return state (eigen).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    /// Start state for simulate mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<usize>,
    /// Tilt for simulate mode, one value per transient state; defaults to
    /// the exact value function (the zero-variance tilt).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<Vec<f64>>,
    /// Tilting box `[nu_min, nu_max]` for constants mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_bounds: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_max: Option<f64>,
    /// Counterexample profile: "divergent" or "summable".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_runs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_path: Option<String>,
}

impl ExperimentConfig {
    /// Check mode-specific required fields; messages name every missing or
    /// ill-formed field.
    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        let need = |problems: &mut Vec<String>, present: bool, field: &str| {
            if !present {
                problems.push(format!("missing required field `{field}`"));
            }
        };
        match self.mode {
            Mode::Solve => {
                need(&mut problems, self.model_path.is_some(), "model_path");
            }
            Mode::Simulate => {
                need(&mut problems, self.model_path.is_some(), "model_path");
                need(&mut problems, self.x0.is_some(), "x0");
                need(&mut problems, self.r.is_some(), "r");
            }
            Mode::Adapt => {
                need(&mut problems, self.model_path.is_some(), "model_path");
                need(&mut problems, self.r.is_some(), "r");
                need(&mut problems, self.n_iters.is_some(), "n_iters");
            }
            Mode::Eigen => {
                need(&mut problems, self.model_path.is_some(), "model_path");
                need(&mut problems, self.r.is_some(), "r");
                need(&mut problems, self.n_iters.is_some(), "n_iters");
            }
            Mode::Counterexample => {
                need(&mut problems, self.spec.is_some(), "spec");
                need(&mut problems, self.steps.is_some(), "steps");
                need(&mut problems, self.n_runs.is_some(), "n_runs");
            }
            Mode::Constants => {
                need(&mut problems, self.model_path.is_some(), "model_path");
            }
        }
        if self.r == Some(0) {
            problems.push("field `r` must be at least 1".into());
        }
        if self.n_iters == Some(0) {
            problems.push("field `n_iters` must be at least 1".into());
        }
        if self.n_runs == Some(0) {
            problems.push("field `n_runs` must be at least 1".into());
        }
        if let Some(spec) = &self.spec {
            if spec != "divergent" && spec != "summable" {
                problems.push(format!(
                    "field `spec`: unknown profile `{spec}` (expected divergent or summable)"
                ));
            }
        }
        if let Some([lo, hi]) = self.clamp {
            if !(lo > 0.0 && lo <= hi) {
                problems.push(format!(
                    "field `clamp`: bounds [{lo}, {hi}] must satisfy 0 < lo <= hi"
                ));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}
