use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration value; `key` is the dotted config path.
    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// A simulated state or action broke a model invariant. Always a bug in
    /// a policy or in the dynamics, never a user error.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("empty cost distribution")]
    EmptyDistribution,

    #[error("reachable state count exceeds the bound of {0}")]
    StateSpaceTooLarge(usize),

    #[error("relative value iteration did not converge within {0} iterations")]
    NoConvergence(usize),

    #[error("singular regression system: {0}")]
    SingularSystem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. }
            | Error::InvalidParam(_)
            | Error::StateSpaceTooLarge(_)
            | Error::SingularSystem(_) => 2,
            Error::Invariant(_) => 3,
            _ => 1,
        }
    }
}
