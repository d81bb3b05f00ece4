use thiserror::Error;

use crate::data::TreatmentSequence;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column length mismatch: `{column}` has {found} rows, expected {expected}")]
    LengthMismatch {
        column: String,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },

    #[error("invalid treatment value {value} in column `{column}` at row {row}")]
    InvalidTreatment {
        column: String,
        row: usize,
        value: i64,
    },

    #[error("dataset has {n} rows, need at least {required} for {folds}-fold cross-fitting")]
    TooFewRows {
        n: usize,
        folds: usize,
        required: usize,
    },

    #[error("invalid fold count {folds} for {n} observations")]
    InvalidFolds { n: usize, folds: usize },

    #[error("dimension mismatch: expected {expected} columns, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("no variation in {what}")]
    NoVariation { what: String },

    #[error("stratum too small for {what}: {rows} rows (minimum {minimum})")]
    StratumTooSmall {
        what: String,
        rows: usize,
        minimum: usize,
    },

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite score for kept observation {row} of sequence {seq}")]
    NonFiniteScore { row: usize, seq: String },

    #[error("empty subgroup: {0}")]
    EmptySubgroup(String),

    #[error("insufficient observations after trimming: {kept} kept, need at least {required}")]
    InsufficientKept { kept: usize, required: usize },

    #[error("invalid contrast {a} vs {b}: {reason}")]
    InvalidContrast {
        a: TreatmentSequence,
        b: TreatmentSequence,
        reason: String,
    },

    #[error("perturbed propensity outside (0,1) for nuisance {nuisance} at r = {r}")]
    PerturbationOutOfRange { nuisance: String, r: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("replication {rep} failed: {source}")]
    Replication {
        rep: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("schema violation in {file}: {reason}")]
    Schema { file: String, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn in_fold(self, fold: usize) -> Self {
        Error::Fold {
            fold,
            source: Box::new(self),
        }
    }

    /// Short machine-readable tag used in CLI error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::InvalidTreatment { .. } => "invalid_treatment",
            Error::TooFewRows { .. } => "too_few_rows",
            Error::InvalidFolds { .. } => "invalid_folds",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptyInput(_) => "empty_input",
            Error::NoVariation { .. } => "no_variation",
            Error::StratumTooSmall { .. } => "empty_stratum",
            Error::Fold { source, .. } => source.kind(),
            Error::NonFiniteScore { .. } => "non_finite_score",
            Error::EmptySubgroup(_) => "empty_subgroup",
            Error::InsufficientKept { .. } => "insufficient_kept",
            Error::InvalidContrast { .. } => "invalid_contrast",
            Error::PerturbationOutOfRange { .. } => "perturbation_out_of_range",
            Error::Config(_) => "config",
            Error::Replication { source, .. } => source.kind(),
            Error::Schema { .. } => "schema",
            Error::Io { .. } => "file",
            Error::Csv(_) => "file",
            Error::Json(_) => "file",
        }
    }
}
