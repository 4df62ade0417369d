use std::path::PathBuf;

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse grouping used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    /// Input files or panels are unusable.
    Data,
    /// A computation failed on otherwise valid input.
    Run,
}

impl ErrorCategory {
    pub fn name(self) -> &'static str {
        match self {
            ErrorCategory::Data => "data",
            ErrorCategory::Run => "run",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {line}, column `{column}`: {message}")]
    MalformedRow {
        line: u64,
        column: String,
        message: String,
    },
    #[error("region {region}: missing date {missing}")]
    DateGap { region: String, missing: NaiveDate },
    #[error("invariant violated at line {line}: {message}")]
    InvariantViolation { line: u64, message: String },
    #[error("duplicate record for ({region}, {year})")]
    DuplicateRecord { region: String, year: i32 },
    #[error("non-positive yield {value} for ({region}, {year})")]
    NonPositiveYield {
        region: String,
        year: i32,
        value: f64,
    },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("insufficient reference data: {0}")]
    InsufficientReference(String),
    #[error("degenerate distribution fit: {0}")]
    DegenerateFit(String),
    #[error("unknown indicator `{0}`")]
    UnknownIndicator(String),
    #[error("feature table is empty after dropping {dropped} incomplete rows")]
    NoRowsEmitted { dropped: usize },
    #[error("need at least {needed} years with data, found {found}")]
    InsufficientYears { needed: usize, found: usize },
    #[error("year {year} is outside the trend window {first}..={last}")]
    YearOutsideTrend { year: i32, first: i32, last: i32 },
    #[error("region {0} has no values in the window")]
    EmptyRegionSeries(String),
    #[error("region {region} has non-positive window mean {mean}")]
    NonPositiveMean { region: String, mean: f64 },
    #[error("year {0} is not present in the panel")]
    YearNotInPanel(i32),
    #[error("split pool is empty")]
    EmptyPool,
    #[error("need at least {needed} years for {folds} folds, found {found}")]
    TooFewYears {
        needed: usize,
        folds: usize,
        found: usize,
    },
    #[error("cannot fit on degenerate data: {0}")]
    DegenerateData(String),
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("tree node without cover weight")]
    MissingCover,
    #[error("brute-force Shapley limited to {max} features, got {got}")]
    TooManyFeatures { max: usize, got: usize },
    #[error("no rows to summarize")]
    EmptyRows,
    #[error("all feature importances are zero")]
    AllZeroImportance,
    #[error("observed values have zero variance")]
    ZeroVariance,
    #[error("empty input")]
    Empty,
    #[error("leakage detected: {0}")]
    LeakageDetected(String),
    #[error("missing cells: {0}")]
    MissingCells(String),
    #[error("no experiment records")]
    NoRecords,
    #[error("unsupported model kind `{0}`")]
    UnsupportedModel(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> ErrorCategory {
        use Error::*;
        match self {
            Io { .. }
            | MalformedRow { .. }
            | DateGap { .. }
            | InvariantViolation { .. }
            | DuplicateRecord { .. }
            | NonPositiveYield { .. }
            | ConfigInvalid(_)
            | UnknownIndicator(_)
            | YearNotInPanel(_)
            | FeatureMismatch(_)
            | MissingCells(_)
            | UnsupportedModel(_)
            | Json(_)
            | Csv(_)
            | Toml(_) => ErrorCategory::Data,
            _ => ErrorCategory::Run,
        }
    }
}
