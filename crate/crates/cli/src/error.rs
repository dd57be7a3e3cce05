use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or input data.
    Input(String),
    /// Inference could not produce a result.
    Inference(String),
    /// An internal consistency check failed on the produced output.
    Invariant(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Input(_) | Self::Io(_) => 2,
            Self::Inference(_) => 3,
            Self::Invariant(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Input(m) => write!(f, "input error: {m}"),
            Self::Inference(m) => write!(f, "inference failure: {m}"),
            Self::Invariant(m) => write!(f, "invariant violation: {m}"),
            Self::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<mrl_gp::Error> for CliError {
    fn from(e: mrl_gp::Error) -> Self {
        use mrl_gp::Error as E;
        match e {
            E::Parameter(_) | E::Unsupported(_) | E::Data(_) => Self::Input(e.to_string()),
            E::Conditioning(_) | E::Numerical { .. } | E::Inference(_) | E::Degenerate(_) => {
                Self::Inference(e.to_string())
            }
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
