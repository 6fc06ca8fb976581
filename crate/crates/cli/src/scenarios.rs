//! Scenarios shipped with the binary.

use crate::config::ScenarioConfig;
use crate::error::CliError;

pub const BUILTIN: [(&str, &str); 4] = [
    ("fig3b-sim", include_str!("../scenarios/fig3b-sim.toml")),
    ("fig3d-sim", include_str!("../scenarios/fig3d-sim.toml")),
    ("fig4-ideal", include_str!("../scenarios/fig4-ideal.toml")),
    ("fig4-exp", include_str!("../scenarios/fig4-exp.toml")),
];

pub fn builtin(name: &str) -> Result<ScenarioConfig, CliError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| CliError::UnknownScenario(name.to_string()))?;
    ScenarioConfig::parse(text)
}

/// A built-in name or a path to a scenario file.
pub fn resolve(arg: &str) -> Result<ScenarioConfig, CliError> {
    let path = std::path::Path::new(arg);
    if path.exists() {
        return ScenarioConfig::load(path);
    }
    if BUILTIN.iter().any(|(n, _)| *n == arg) {
        return builtin(arg);
    }
    if arg.ends_with(".toml") || arg.ends_with(".txt") || arg.contains('/') {
        return Err(CliError::Io(format!("{arg}: no such file")));
    }
    Err(CliError::UnknownScenario(arg.to_string()))
}
