use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("label {label} out of range for {num_classes} classes (sample {sample})")]
    LabelOutOfRange {
        sample: usize,
        label: usize,
        num_classes: usize,
    },
    #[error("non-finite loss at iteration {iter}: base={base}, incay={incay}, decay={decay}")]
    NonFiniteLoss {
        iter: usize,
        base: f64,
        incay: f64,
        decay: f64,
    },
    #[error("malformed IDX file {path}: {reason} (byte offset {offset})")]
    MalformedIdx {
        path: PathBuf,
        reason: String,
        offset: u64,
    },
    #[error("malformed model file: {0}")]
    MalformedModel(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
