//! Configuration, commands and error mapping behind the `covol` binary.

pub mod commands;
pub mod config;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<covol::Error> for CliError {
    fn from(e: covol::Error) -> Self {
        use covol::Error as E;
        match e {
            E::BadConfig(_) | E::ShapeMismatch(_) | E::BadArity(_) | E::NoUsableBlocks => CliError::Config(e.to_string()),
            E::Io(_) | E::Csv(_) | E::Json(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
