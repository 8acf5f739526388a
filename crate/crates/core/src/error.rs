use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("degenerate mask: query row {row} has no visible key")]
    DegenerateMask { row: usize },

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("undefined metric: {0}")]
    Metric(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn shapes(op: &'static str, a: &[usize], b: &[usize]) -> Self {
        Error::Dimension { op, detail: format!("incompatible shapes {a:?} and {b:?}") }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("time not strictly increasing at data row {row}")]
    NonMonotoneTime { row: usize },

    #[error("irregular sampling at data row {row}: delta {delta} ms, expected {expected} ms")]
    IrregularSampling { row: usize, delta: f64, expected: f64 },

    #[error("ragged row {row}: expected {expected} fields, found {found}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("non-numeric cell at data row {row}, column `{column}`: {value:?}")]
    NonNumeric { row: usize, column: String, value: String },

    #[error("empty table")]
    Empty,

    #[error("resampling to {target_hz} Hz would downsample a {source_hz} Hz table")]
    Downsample { source_hz: f64, target_hz: f64 },

    #[error("zero-variance channel `{0}`")]
    ZeroVariance(String),

    #[error("table too short: {len} rows, need at least {needed}")]
    TooShort { len: usize, needed: usize },

    #[error("channel mismatch: {0}")]
    ChannelMismatch(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic: expected \"FGN1\", found {found:?}")]
    BadMagic { found: Vec<u8> },

    #[error("truncated header: need {needed} bytes, file has {found}")]
    TruncatedHeader { needed: u64, found: u64 },

    #[error("truncated parameter blob: expected {expected} values, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("config declares {expected} parameters but blob holds {found}")]
    LengthMismatch { expected: u64, found: u64 },

    #[error("malformed config json: {0}")]
    Json(#[from] serde_json::Error),
}
