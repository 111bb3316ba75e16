use std::fmt;
use std::process::ExitCode;

use postsample::{ConfigError, SamplerError};

/// Why a subcommand stopped, mapped onto the process exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags, unreadable files, invalid configuration (exit 2).
    Usage(anyhow::Error),
    /// The run finished but a verdict did not pass (exit 1).
    Verdict(String),
    /// An iterate left the finite range (exit 3).
    Divergence(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            Failure::Verdict(_) => ExitCode::from(1),
            Failure::Usage(_) => ExitCode::from(2),
            Failure::Divergence(_) => ExitCode::from(3),
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(e) => write!(f, "error: {e:#}"),
            Failure::Verdict(msg) => write!(f, "verdict failed: {msg}"),
            Failure::Divergence(e) => write!(f, "diverged: {e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<SamplerError> for Failure {
    fn from(e: SamplerError) -> Self {
        if e.is_divergence() {
            Failure::Divergence(e.into())
        } else {
            Failure::Usage(e.into())
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Sampler(s) => s.into(),
            other => Failure::Usage(other.into()),
        }
    }
}

pub type CmdResult<T = ()> = Result<T, Failure>;
