use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("unknown scenario '{0}'")]
    UnknownScenario(String),
    #[error("validation failed:\n{0}")]
    Validation(String),
    #[error("simulation failed: {0}")]
    Simulation(#[from] ncm_core::Error),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
