use hdrtv_core::Error;

/// Failure of one CLI run; the exit code depends on the kind.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Core(e) => match e {
                Error::Param(_) | Error::Tensor(_) => 2,
                Error::Io { .. } | Error::Format(_) | Error::Ingest { .. } => 3,
                Error::Divergence { .. } | Error::Computation(_) => 4,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io(_) => "io",
            CliError::Core(e) => match e {
                Error::Param(_) => "param",
                Error::Tensor(_) => "tensor",
                Error::Io { .. } => "io",
                Error::Format(_) => "format",
                Error::Ingest { .. } => "ingest",
                Error::Divergence { .. } => "divergence",
                Error::Computation(_) => "computation",
            },
        }
    }

    /// `error[kind] code=N: message` on a single line.
    pub fn line(&self) -> String {
        let msg = match self {
            CliError::Config(m) | CliError::Io(m) => m.clone(),
            CliError::Core(e) => e.to_string(),
        };
        let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}] code={}: {msg}", self.kind(), self.exit_code())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}
