use thiserror::Error;

#[derive(Debug, Error)]
pub enum DelveError {
    #[error("duplicate entry at (row {row}, col {col})")]
    DuplicateEntry { row: usize, col: usize },

    #[error("index out of range: (row {row}, col {col}) for a {n} x {p} matrix")]
    IndexOutOfRange {
        row: usize,
        col: usize,
        n: usize,
        p: usize,
    },

    #[error("stored counts must be positive (row {row}, col {col})")]
    ZeroCount { row: usize, col: usize },

    #[error("partition covers {labels} rows but the matrix has {rows}")]
    PartitionMismatch { labels: usize, rows: usize },

    #[error("group {group} is empty")]
    EmptyGroup { group: usize },

    #[error("group label {label} at row {row} is outside [0, {k})")]
    LabelOutOfRange { row: usize, label: usize, k: usize },

    #[error("group {group} has zero total count")]
    ZeroGroupTotal { group: usize },

    #[error("row {row} has total {total}, but at least {required} is required")]
    RowTooShort {
        row: usize,
        total: u64,
        required: u64,
    },

    #[error("variant precondition violated: {0}")]
    VariantPrecondition(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("infeasible design: {0}")]
    Infeasible(String),

    #[error("enumeration state space has {size:.3e} joint outcomes (limit {limit:.0e})")]
    StateSpaceTooLarge { size: f64, limit: f64 },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("replicate {index}: {source}")]
    Replicate {
        index: u64,
        #[source]
        source: Box<DelveError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl DelveError {
    /// Distinguishes failed variant preconditions (and short rows) from
    /// malformed input, so front ends can map them to separate exit codes.
    pub fn is_precondition(&self) -> bool {
        match self {
            DelveError::VariantPrecondition(_) | DelveError::RowTooShort { .. } => true,
            DelveError::Replicate { source, .. } => source.is_precondition(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, DelveError>;
