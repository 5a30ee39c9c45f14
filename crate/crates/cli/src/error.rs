use std::fmt;

use fedhpo_core::Error as CoreError;

/// Exit status classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Config,
    Runtime,
}

/// A failure carrying a stable machine-readable code such as `config.invalid`.
#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub code: &'static str,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(code: &'static str, message: impl Into<String>) -> Self {
        Self { kind: Kind::Config, code, message: message.into() }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        Self { kind: Kind::Runtime, code, message: message.into() }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => 2,
            Kind::Runtime => 3,
        }
    }

    /// Prefixes the message with where the failure happened.
    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }

    /// One line: `error[<code>]: <message>`, with embedded newlines flattened.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.code, self.message.replace('\n', " "))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::InvalidConfig(_) => return CliError::config("config.invalid", e.to_string()),
            CoreError::InvalidModel(_) => return CliError::config("config.model", e.to_string()),
            CoreError::InvalidDataset(_) | CoreError::Empty(_) | CoreError::LengthMismatch { .. } => "data.invalid",
            CoreError::Parse { .. } | CoreError::Csv(_) => "data.parse",
            CoreError::Diverged { .. } => "training.diverged",
            CoreError::Singular { .. } => "gp.singular",
            CoreError::MissingResults(_) => "analysis.missing-results",
            CoreError::Io(_) => "io",
            CoreError::Json(_) => "json",
        };
        CliError::runtime(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime("io", e.to_string())
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl fmt::Display) -> CliResult<T>;
}

impl<T, E: Into<CliError>> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl fmt::Display) -> CliResult<T> {
        self.map_err(|e| e.into().context(what))
    }
}
