use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad preset name, out-of-range parameter, inconsistent settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A caller broke an operation's precondition (dimensions, counts, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Inputs outside the region where a guarantee is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A controller failed at a given rollout step.
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("config file not found: {}", .0.display())]
    MissingConfig(PathBuf),

    #[error("config syntax error: {0}")]
    ConfigSyntax(String),

    #[error("unknown config key: {0}")]
    UnknownKey(String),

    #[error("missing model file: {}", .0.display())]
    MissingModel(PathBuf),

    #[error("model file format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn at_step(step: usize, source: Error) -> Self {
        Error::AtStep {
            step,
            source: Box::new(source),
        }
    }

    /// Innermost error, looking through step annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit code used by the CLI.
    ///
    /// 0 ok, 1 configuration, 2 missing model, 3 guarantee-domain violation, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::Config(_)
            | Error::MissingConfig(_)
            | Error::ConfigSyntax(_)
            | Error::UnknownKey(_) => 1,
            Error::MissingModel(_) | Error::Format(_) => 2,
            Error::Domain(_) => 3,
            Error::Io(_) | Error::Csv(_) => 4,
            Error::Contract(_) | Error::NonFinite(_) | Error::AtStep { .. } => 5,
        }
    }
}
