use std::fmt;
use std::process::ExitCode;

/// Process exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Usage = 1,
    Input = 2,
    Output = 3,
    Divergence = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        Self { status: Status::Usage, message: m.into() }
    }

    pub fn input(m: impl Into<String>) -> Self {
        Self { status: Status::Input, message: m.into() }
    }

    pub fn output(m: impl Into<String>) -> Self {
        Self { status: Status::Output, message: m.into() }
    }

    /// Classifies an error raised while solving.
    pub fn solver(e: cplm_core::Error) -> Self {
        use cplm_core::Error;
        match e {
            Error::Divergence { .. } | Error::Factorization { .. } => Self { status: Status::Divergence, message: e.to_string() },
            _ => Self::usage(e.to_string()),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.status as u8)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}
