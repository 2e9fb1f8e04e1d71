use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),

    #[error("document `{0}` has no indexable terms after tokenization")]
    EmptyDocument(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("budget {budget} exceeds the {capacity} selectable cells")]
    BudgetExceeded { budget: usize, capacity: usize },

    #[error("selection levels violate containment: level {level} is not a subset of level {previous}")]
    Containment { level: usize, previous: usize },

    #[error(
        "instance too large to enumerate ({combinations:.3e} candidate selections > 1e7); \
         use property-test scale instances (n*r of a few dozen at most)"
    )]
    InstanceTooLarge { combinations: f64 },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
