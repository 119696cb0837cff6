use thiserror::Error;

/// Errors produced while ingesting data, fitting learners, or estimating effects.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error(
        "weak instrument: |mean(T_res * Z_res)| = {strength:.3e} is below the relevance threshold {threshold:.1e}"
    )]
    WeakInstrument { strength: f64, threshold: f64 },

    #[error("no identification: {0}")]
    NoIdentification(String),

    #[error("collinear design: columns {columns:?} are linearly dependent on earlier columns")]
    Collinearity { columns: Vec<usize> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("nuisance `{name}`: {source}")]
    Nuisance {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Argument(_) => "argument",
            Error::Numerical(_) => "numerical",
            Error::WeakInstrument { .. } => "weak_instrument",
            Error::NoIdentification(_) => "no_identification",
            Error::Collinearity { .. } => "collinearity",
            Error::Config(_) => "config",
            Error::Nuisance { source, .. } => source.kind(),
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn in_nuisance(self, name: &str) -> Error {
        Error::Nuisance {
            name: name.to_string(),
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
