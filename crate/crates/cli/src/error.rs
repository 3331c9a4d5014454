use std::fmt;

/// An error tagged with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    code: u8,
    source: anyhow::Error,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub const CONFIG: u8 = 1;
    pub const DATA: u8 = 2;
    pub const BACKEND: u8 = 3;

    pub fn new(code: u8, source: impl Into<anyhow::Error>) -> Self {
        Self {
            code,
            source: source.into(),
        }
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Self::CONFIG, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(Self::DATA, anyhow::anyhow!("{msg}"))
    }

    pub fn backend(msg: impl fmt::Display) -> Self {
        Self::new(Self::BACKEND, anyhow::anyhow!("{msg}"))
    }

    pub fn code(&self) -> u8 {
        self.code
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.source)
    }
}

impl std::error::Error for CliError {}
