use std::path::{Path, PathBuf};

use relgraph_core::train::TrainError;

/// Failure classes surfaced by the CLI, one exit code each.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn class(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) | Error::Io { .. } => "data",
            Error::Numeric(_) => "numeric",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.class() {
            "config" => 2,
            "data" => 3,
            _ => 4,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
        move |source| Error::Io { path: path.to_path_buf(), source }
    }
}

impl From<relgraph_core::Error> for Error {
    fn from(e: relgraph_core::Error) -> Self {
        use relgraph_core::Error as E;
        let msg = e.to_string();
        match e {
            E::Shape(_) | E::Config(_) | E::InvalidArgument(_) => Error::Config(msg),
            E::InsufficientData(_) | E::DegenerateRow { .. } => Error::Data(msg),
            E::NonFinite(_) | E::Backward(_) | E::NotReproducible(_) => Error::Numeric(msg),
        }
    }
}

impl From<TrainError> for Error {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Setup(inner) => inner.into(),
            diverged @ TrainError::Diverged { .. } => Error::Numeric(diverged.to_string()),
        }
    }
}
