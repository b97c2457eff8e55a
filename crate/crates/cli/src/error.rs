use std::fmt;

/// Exit code for unreadable or malformed input.
pub const EXIT_INPUT: i32 = 2;
/// Exit code for invalid flags or parameter values.
pub const EXIT_PARAM: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Param(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Param(_) => EXIT_PARAM,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn param(msg: impl Into<String>) -> Self {
        CliError::Param(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Param(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<liff::Error> for CliError {
    fn from(e: liff::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Param(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
