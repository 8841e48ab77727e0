//! Experiment harness for the hierarchical control toolkit: TOML scenario
//! files, presets, experiment runs and their CSV/JSON output.

pub mod config;
pub mod error;
pub mod output;
pub mod presets;
pub mod record;
pub mod run;
pub mod validate;

pub use config::{ExperimentKind, ScenarioConfig};
pub use error::HarnessError;
pub use output::{emit_plot_data, summary, Run, RunOptions};
pub use presets::{preset, preset_names, PRESETS};
pub use record::{Outcome, RunRecord, RunStatus, Table};
pub use run::run_scenario;
pub use validate::{validate_config, ValidationReport};

/// Looks up a preset, listing the alternatives when the name is unknown.
pub fn load_preset(name: &str) -> Result<ScenarioConfig, HarnessError> {
    preset(name).ok_or_else(|| HarnessError::UnknownPreset {
        name: name.to_string(),
        available: preset_names().iter().map(|s| s.to_string()).collect(),
    })
}

pub fn load_config(path: &std::path::Path) -> Result<ScenarioConfig, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    ScenarioConfig::from_toml(&text).map_err(|e| HarnessError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}
