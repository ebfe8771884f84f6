//! Built-in experiment configs, embedded from `presets/*.toml`.

use super::run::{run_sweep, Overrides, SweepOutcome};
use super::{ConfigError, ScenarioConfig};
use crate::Error;

const PRESETS: [(&str, &str); 6] = [
    ("fig1", include_str!("../../presets/fig1.toml")),
    ("fig2", include_str!("../../presets/fig2.toml")),
    ("fig3", include_str!("../../presets/fig3.toml")),
    ("fig4", include_str!("../../presets/fig4.toml")),
    ("fig5", include_str!("../../presets/fig5.toml")),
    ("fig6", include_str!("../../presets/fig6.toml")),
];

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// TOML text of a preset.
pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset_config(name: &str) -> Result<ScenarioConfig, ConfigError> {
    let text = preset_source(name).ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    ScenarioConfig::from_toml_str(text)
}

/// Runs a preset sweep; outputs go to `out/<name>` unless overridden.
pub fn run_preset(name: &str, overrides: &Overrides) -> Result<SweepOutcome, Error> {
    run_sweep(&preset_config(name)?, overrides)
}
