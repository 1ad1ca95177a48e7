use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal has {len} samples, fewer than the window size {window}")]
    SignalTooShort { len: usize, window: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("invalid signal: {0}")]
    InvalidSignal(String),
    #[error("spectrogram has no frames")]
    EmptySpectrogram,
    #[error("note frequency {freq:.2} Hz is above the Nyquist frequency {nyquist:.2} Hz")]
    NoteAboveNyquist { freq: f64, nyquist: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("supervised coding requires a class label")]
    MissingLabel,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("solver did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("class {class} has {available} samples, {required} required")]
    InsufficientSamples {
        class: usize,
        available: usize,
        required: usize,
    },
    #[error("non-finite objective at iteration {iteration}: {detail}")]
    NonFiniteObjective { iteration: usize, detail: String },
    #[error("binary SVM training needs samples of both signs")]
    SingleClassInput,
    #[error("one-vs-all training needs at least two classes, each with a sample: {0}")]
    MissingClass(String),
    #[error("invalid clip duration {0} s")]
    InvalidDuration(f64),
    #[error("class directory {0} contains no WAV files")]
    EmptyClassDir(PathBuf),
    #[error("unsupported WAV format in {path}: {detail}")]
    UnsupportedWavFormat { path: PathBuf, detail: String },
    #[error("corrupt file {path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },
    #[error("class {class} has {count} samples; at least 2 are needed to split")]
    ClassTooSmall { class: usize, count: usize },
    #[error("archive version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt archive: {0}")]
    CorruptArchive(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the CLI: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::InvalidParam(_) | Error::Config(_) => 2,
            Error::NonConvergence { .. } | Error::NonFiniteObjective { .. } => 4,
            _ => 3,
        }
    }
}
