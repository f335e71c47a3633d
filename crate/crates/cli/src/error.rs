use thiserror::Error;

use clockprobe::FitError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),

    #[error("physics: {0}")]
    Physics(String),

    #[error("fit: {0}")]
    Fit(#[from] FitError),
}

impl CliError {
    /// 0 is success; each failure class has its own code.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Physics(_) => 3,
            CliError::Fit(_) => 4,
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            CliError::Io(e) => CliError::Io(std::io::Error::new(e.kind(), format!("{what}: {e}"))),
            CliError::Config(m) => CliError::Config(format!("{what}: {m}")),
            CliError::Physics(m) => CliError::Physics(format!("{what}: {m}")),
            fit @ CliError::Fit(_) => fit,
        }
    }
}

impl From<clockprobe::Error> for CliError {
    fn from(e: clockprobe::Error) -> Self {
        match e {
            clockprobe::Error::Io(io) => CliError::Io(io),
            clockprobe::Error::Fit(f) => CliError::Fit(f),
            clockprobe::Error::InvalidParameter(m) => CliError::Config(m),
            other => CliError::Physics(other.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e.to_string()))
    }
}
