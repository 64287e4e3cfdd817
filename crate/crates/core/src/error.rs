use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed row {row}, column `{column}`: {message}")]
    MalformedRow {
        row: usize,
        column: String,
        message: String,
    },
    #[error("duplicate key (company `{company_id}`, year {year})")]
    DuplicateKey { company_id: String, year: i32 },
    #[error("negative value in row {row}, column `{column}`")]
    NegativeValue { row: usize, column: String },
    #[error("non-positive reported emission in row {row}, column `{column}`")]
    NonPositiveEmission { row: usize, column: String },
    #[error("target must be strictly positive, got {0}")]
    NonPositiveTarget(f64),
    #[error("no panel row for target (company `{company_id}`, year {year})")]
    MissingPanelRow { company_id: String, year: i32 },
    #[error("feature matrix has no rows")]
    EmptyMatrix,
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("brute-force Shapley enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("last year {year} has {got} reporting companies, need at least {need}")]
    TooFewReporters { year: i32, got: usize, need: usize },
    #[error("need at least {need} companies for cross-validation, got {got}")]
    TooFewCompanies { got: usize, need: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("targets have zero variance")]
    ZeroVariance,
    #[error("unknown grouping `{0}`")]
    UnknownGrouping(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no FX rate for currency `{currency}` in {year}")]
    MissingFxRate { currency: String, year: i32 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code, used by the CLI's `error_code=` prefix.
    pub fn code(&self) -> &'static str {
        match self {
            Error::MalformedRow { .. } => "malformed_row",
            Error::DuplicateKey { .. } => "duplicate_key",
            Error::NegativeValue { .. } => "negative_value",
            Error::NonPositiveEmission { .. } => "non_positive_emission",
            Error::NonPositiveTarget(_) => "non_positive_target",
            Error::MissingPanelRow { .. } => "missing_panel_row",
            Error::EmptyMatrix => "empty_matrix",
            Error::DegenerateData(_) => "degenerate_data",
            Error::SchemaMismatch(_) => "schema_mismatch",
            Error::CorruptModel(_) => "corrupt_model",
            Error::EmptyBackground => "empty_background",
            Error::TooManyFeatures { .. } => "too_many_features",
            Error::TooFewReporters { .. } => "too_few_reporters",
            Error::TooFewCompanies { .. } => "too_few_companies",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::ZeroVariance => "zero_variance",
            Error::UnknownGrouping(_) => "unknown_grouping",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingFxRate { .. } => "missing_fx_rate",
            Error::Io { .. } => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Opens `path` for writing as CSV.
pub(crate) fn create_csv(path: &std::path::Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    // Callers write their own header row, even for empty tables.
    Ok(csv::WriterBuilder::new().has_headers(false).from_writer(file))
}
