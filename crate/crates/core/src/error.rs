use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error("{}:{line}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate image id `{0}`")]
    DuplicateId(String),

    #[error("failed to decode {}: {message}", path.display())]
    Decode { path: PathBuf, message: String },

    #[error("dimension mismatch: image is {image_width}x{image_height}, mask is {mask_width}x{mask_height}")]
    DimensionMismatch {
        image_width: u32,
        image_height: u32,
        mask_width: u32,
        mask_height: u32,
    },

    #[error("invalid mask value {value} at row {row}, col {col}")]
    InvalidMaskValue { value: u8, row: u32, col: u32 },

    #[error("class code {0} out of range")]
    OutOfRange(u32),

    #[error("image {width}x{height} is smaller than patch side {patch_side}")]
    ImageTooSmall {
        width: u32,
        height: u32,
        patch_side: u32,
    },

    #[error("patch side {0} is too small (need at least {1})")]
    PatchTooSmall(u32, u32),

    #[error("descriptor tag mismatch: expected {expected}, got {actual}")]
    TagMismatch { expected: String, actual: String },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("failed to load model {}: {message}", path.display())]
    ModelLoad { path: PathBuf, message: String },

    #[error("model output has dimension {actual}, expected {expected}")]
    OutputDimMismatch { expected: usize, actual: usize },

    #[error("inference failed: {0}")]
    Inference(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid number of components {requested}: must be in 1..={max}")]
    InvalidComponents { requested: usize, max: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },

    #[error("training data contains fewer than two distinct classes")]
    SingleClassData,

    #[error("image `{0}` is already assigned to a fold")]
    AlreadyAssigned(String),

    #[error("invalid fold count {0}: need at least 2")]
    BadK(usize),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("not enough patches: {0}")]
    NotEnoughPatches(String),

    #[error("training fold {fold} contains {classes} class(es); need at least 2")]
    InsufficientClassCoverage { fold: usize, classes: usize },

    #[error("image `{image_id}` appears in both train and test sets of fold {fold}")]
    Leakage { fold: usize, image_id: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {format} data: {message}")]
    Format {
        format: &'static str,
        message: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::FileNotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            format,
            message: message.into(),
        }
    }
}
