use thiserror::Error;

/// Exit codes of the `chernoff` binary.
pub mod exit {
    pub const OK: u8 = 0;
    pub const IO: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;
    pub const ASSERTION: u8 = 4;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {field}: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Core(#[from] chernoff_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use chernoff_core::Error as E;
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Core(
                E::KernelUnderResolved { .. }
                | E::IllConditionedFit(_)
                | E::ShellTooThick { .. }
                | E::PointNotOnManifold { .. },
            ) => exit::NUMERICAL,
            CliError::Core(_) => exit::CONFIG,
            CliError::Io { .. } | CliError::Output(_) => exit::IO,
        }
    }
}
