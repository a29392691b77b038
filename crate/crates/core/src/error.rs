use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("mesh consistency error: {0}")]
    Consistency(String),
    #[error("assembly error in element {element}: {reason}")]
    Assembly { element: usize, reason: String },
    #[error("solver error: {0}")]
    Solver(String),
    #[error("shape contract violated: {0}")]
    Shape(String),
    #[error("sample {geometry_id}/{bc_case}/{load_case}: {source}")]
    Sample {
        geometry_id: u32,
        bc_case: String,
        load_case: u32,
        #[source]
        source: Box<Error>,
    },
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
