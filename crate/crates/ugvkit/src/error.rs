use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Bad input content: malformed files, invalid parameters, failed solves.
    #[error("{0}")]
    Validation(String),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    /// Prefix a validation message with a file or record location.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            Error::Validation(m) => Error::Validation(format!("{ctx}: {m}")),
            io => io,
        }
    }

    /// Process exit code: 1 for validation errors, 2 for I/O errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Validation(_) => 1,
            Error::Io { .. } => 2,
        }
    }
}

macro_rules! validation_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Error {
            fn from(e: $t) -> Self {
                Error::Validation(e.to_string())
            }
        }
    )*};
}

validation_from!(
    ugvkit_core::TensorError,
    ugvkit_core::network::NetworkError,
    ugvkit_core::decoding::DecodeError,
    ugvkit_core::encoding::EncodingError,
    ugvkit_core::geometry::GeometryError,
    ugvkit_core::synth::SynthError
);

pub type Result<T, E = Error> = std::result::Result<T, E>;
