use thiserror::Error;

/// Error type shared by every module in the crate.
///
/// Variants map onto the CLI exit-code taxonomy: `Format`, `Corrupt` and
/// `Io` are file-level failures (exit 2), `Numeric` and `Schedule` are
/// computation failures (exit 3), `Argument` and `Config` are caller
/// mistakes (exit 4).
#[derive(Debug, Error)]
pub enum Error {
    /// A container did not match its declared layout (bad magic, bad version).
    #[error("format error: {0}")]
    Format(String),

    /// Header and payload disagree, or payload values are invalid.
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A numerical operation could not produce a meaningful result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A tile schedule does not cover its output space exactly once.
    #[error("schedule error: {0}")]
    Schedule(String),

    /// A pipeline configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_) | Error::Corrupt(_) | Error::Io(_) => 2,
            Error::Numeric(_) | Error::Schedule(_) => 3,
            Error::Argument(_) | Error::Config(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
