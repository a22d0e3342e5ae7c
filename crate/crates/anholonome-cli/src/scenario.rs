//! JSON scenario files mirroring the CLI run configuration.
//!
//! All fields are optional except that a system must come from either the
//! file or the flags; explicit flags override file values. Unknown keys are
//! rejected.
//!
//! ```json
//! {
//!   "system": "paper-particle",
//!   "parameters": {"offset": 0.5},
//!   "initial": {"coords": {"x": 0.1}, "velocities": {"x": 1.0, "y": 0.0}},
//!   "h": 1e-3,
//!   "T": 5.0,
//!   "method": "rk4",
//!   "outputs": {"reduced": false, "routh": false, "mu": [2.0], "crosscheck": false}
//! }
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: Option<String>,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub initial: InitialSpec,
    pub h: Option<f64>,
    #[serde(rename = "T")]
    pub t_final: Option<f64>,
    pub method: Option<String>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub coords: BTreeMap<String, f64>,
    #[serde(default)]
    pub velocities: BTreeMap<String, f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default)]
    pub reduced: bool,
    #[serde(default)]
    pub routh: bool,
    #[serde(default)]
    pub mu: Vec<f64>,
    #[serde(default)]
    pub crosscheck: bool,
}

impl ScenarioFile {
    /// Load and validate a scenario file.
    pub fn load(path: &str) -> Result<Self, String> {
        let text =
            std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
        let scenario: ScenarioFile =
            serde_json::from_str(&text).map_err(|e| format!("invalid scenario {path}: {e}"))?;
        if let Some(h) = scenario.h {
            if !(h.is_finite() && h > 0.0) {
                return Err(format!("invalid scenario {path}: h must be positive"));
            }
        }
        if let Some(t) = scenario.t_final {
            if !(t.is_finite() && t >= 0.0) {
                return Err(format!("invalid scenario {path}: T must be nonnegative"));
            }
        }
        Ok(scenario)
    }
}
