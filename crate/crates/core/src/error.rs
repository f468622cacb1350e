use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the cataloging library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot decode or encode {path}: {message}")]
    Codec { path: PathBuf, message: String },
    #[error("invalid world file {path}: {message}")]
    WorldFile { path: PathBuf, message: String },
    #[error("no geotransform for {0}: world file missing and none configured")]
    MissingGeoTransform(PathBuf),
    #[error("channel count mismatch: configuration declares {expected}, file has {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("required channel `{0}` is not present")]
    MissingChannel(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed {what}: {message}")]
    Format { what: String, message: String },
    #[error("stage `{stage}` failed{}: {source}", date_context(.date))]
    Stage {
        stage: &'static str,
        date: Option<String>,
        #[source]
        source: Box<Error>,
    },
}

fn date_context(date: &Option<String>) -> String {
    match date {
        Some(d) => format!(" on {d}"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn codec(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Codec {
            path: path.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn format(what: impl Into<String>, message: impl ToString) -> Self {
        Error::Format {
            what: what.into(),
            message: message.to_string(),
        }
    }

    /// Wraps an error with the pipeline stage (and optionally the acquisition date) it came from.
    pub fn in_stage(self, stage: &'static str, date: Option<String>) -> Self {
        Error::Stage {
            stage,
            date,
            source: Box::new(self),
        }
    }

    /// True for errors caused by an invalid configuration rather than by data.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
