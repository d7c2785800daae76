use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad arguments or configuration.
    Usage,
    /// Input files that cannot be parsed or are not supported.
    InputFormat,
    /// A segmenter backend failed or violated the protocol.
    Backend,
    /// A data invariant was violated inside the pipeline.
    Invariant,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid window: lo ({lo}) must be below hi ({hi})")]
    InvalidWindow { lo: f32, hi: f32 },

    #[error("invalid size: {0}")]
    InvalidSize(String),

    #[error("invalid spacing: {0}")]
    InvalidSpacing(String),

    #[error("invalid class map: {0}")]
    InvalidClassMap(String),

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("class map mismatch: {0}")]
    ClassMismatch(String),

    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("invalid probability map: {0}")]
    InvalidProbabilities(String),

    #[error("no content: {0}")]
    NoContent(String),

    #[error("invalid RVOL header: {0}")]
    InvalidHeader(String),

    #[error("malformed RVOL file: {0}")]
    MalformedVolume(String),

    #[error("unsupported transfer syntax {syntax} in {}", path.display())]
    UnsupportedSyntax { path: PathBuf, syntax: String },

    #[error("malformed DICOM series: {0}")]
    MalformedSeries(String),

    #[error("PNG error: {0}")]
    Png(String),

    #[error("invalid phantom spec: {0}")]
    InvalidPhantom(String),

    #[error("mesh is not watertight: {open_edges} open or non-manifold edges (first: {first:?})")]
    OpenMesh { open_edges: usize, first: (u32, u32) },

    #[error("segmenter protocol error: {message}{}", stderr_suffix(.stderr_tail))]
    Protocol { message: String, stderr_tail: String },

    #[error("segmenter backend failure: {message}{}", stderr_suffix(.stderr_tail))]
    Backend { message: String, stderr_tail: String },

    #[error("{axis} slice {index}: {source}")]
    AtSlice {
        axis: &'static str,
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn stderr_suffix(tail: &str) -> String {
    if tail.is_empty() {
        String::new()
    } else {
        format!("\n--- backend stderr (tail) ---\n{}", tail.trim_end())
    }
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::AtSlice { source, .. } => source.kind(),
            Error::Protocol { .. } | Error::Backend { .. } | Error::InvalidProbabilities(_) => {
                ErrorKind::Backend
            }
            Error::InvalidHeader(_)
            | Error::MalformedVolume(_)
            | Error::UnsupportedSyntax { .. }
            | Error::MalformedSeries(_)
            | Error::Png(_)
            | Error::LabelOutOfRange { .. }
            | Error::Domain(_) => ErrorKind::InputFormat,
            Error::Io { .. } => ErrorKind::InputFormat,
            Error::InvalidWindow { .. }
            | Error::InvalidSize(_)
            | Error::InvalidSpacing(_)
            | Error::InvalidClassMap(_)
            | Error::InvalidPhantom(_)
            | Error::Config(_)
            | Error::DimsMismatch(_)
            | Error::ClassMismatch(_) => ErrorKind::Usage,
            Error::IndexOutOfRange { .. } | Error::NoContent(_) | Error::OpenMesh { .. } => {
                ErrorKind::Invariant
            }
        }
    }
}
