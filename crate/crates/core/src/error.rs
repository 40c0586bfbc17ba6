use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("value {value} outside the domain of dimension `{dimension}`")]
    DomainViolation { dimension: String, value: f64 },

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("input is not in Hilbert order at record {index} (after record {})", .index - 1)]
    SortOrderViolation { index: u64 },

    #[error("{stream} stream is not in Hilbert order at position {position}")]
    StreamOrderViolation { stream: &'static str, position: u64 },

    #[error("records cannot be separated below resolution {max}")]
    Unseparable { max: u32 },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("bad magic bytes, expected {expected}")]
    BadMagic { expected: &'static str },

    #[error("unsupported {what} format version {found}")]
    UnsupportedVersion { what: &'static str, found: u16 },

    #[error("block {block} is corrupt (checksum mismatch)")]
    CorruptBlock { block: u64 },

    #[error("corrupt {what}: {detail}")]
    Corrupt { what: &'static str, detail: String },

    #[error("index is stale: {0}")]
    StaleIndex(String),

    #[error("block range {from}..{to} out of bounds for {count} blocks")]
    BlockRange { from: u64, to: u64, count: u64 },

    #[error("unknown measure `{0}`")]
    UnknownMeasure(String),

    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),

    #[error("MEDIAN is holistic and must be answered by range_median, not range_aggregate")]
    HolisticAggregate,

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("invalid generator config: {0}")]
    InvalidConfig(String),

    #[error("view is locked by another update ({})", .0.display())]
    Locked(PathBuf),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }
}
