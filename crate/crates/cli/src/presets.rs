//! Configurations reproducing each figure, shipped inside the binary.

use crate::config::RunConfig;
use crate::error::CliError;

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", include_str!("../presets/fig1.toml")),
    ("fig2a", include_str!("../presets/fig2a.toml")),
    ("fig2c", include_str!("../presets/fig2c.toml")),
    ("fig3", include_str!("../presets/fig3.toml")),
    ("fig4", include_str!("../presets/fig4.toml")),
];

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn preset(name: &str) -> Result<RunConfig, CliError> {
    let src = preset_source(name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
        CliError::Config(format!("unknown preset \"{name}\" (known: {})", known.join(", ")))
    })?;
    RunConfig::from_toml_str(src).map_err(|e| e.context(&format!("preset {name}")))
}
