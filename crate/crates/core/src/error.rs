use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// Cumulative undelivered counts went down without a declared connection boundary.
    #[error(
        "limit notice count decreased from {previous} to {current} at {timestamp_ms}; \
         declare a connection boundary before it"
    )]
    UndeclaredConnectionBoundary {
        previous: u64,
        current: u64,
        timestamp_ms: i64,
    },

    #[error("conflicting aliases: {}", .0.join("; "))]
    AliasCollision(Vec<String>),

    #[error("factuality score {0} outside 0..=10")]
    FactualityOutOfRange(i64),

    #[error("handle @{handle} claimed by both {first} and {second}")]
    DuplicateHandle {
        handle: String,
        first: String,
        second: String,
    },

    #[error("redirect cycle starting at {0}")]
    RedirectCycle(String),

    #[error("matrix keys of mixed types: expected {expected}, found {found}")]
    MixedKeyTypes { expected: String, found: String },

    #[error("{0} has no interactions")]
    EmptyRow(String),

    #[error("unknown outlet {0}")]
    UnknownOutlet(String),

    #[error("k={k} exceeds the {distinct} distinct points")]
    TooFewPoints { k: usize, distinct: usize },

    #[error("metric needs at least 2 clusters, found {0}")]
    TooFewClusters(usize),

    #[error("centroids of clusters {0} and {1} coincide")]
    CoincidentCentroids(usize, usize),

    #[error("actual values are constant; R² is undefined")]
    ConstantTarget,

    #[error("singular system; use a positive regularisation strength")]
    Singular,

    #[error("{samples} samples cannot satisfy a minimum of {min_leaf} per leaf")]
    InsufficientSamples { samples: usize, min_leaf: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Short machine-readable tag used in structured error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Invalid(_) => "invalid_input",
            Error::UndeclaredConnectionBoundary { .. } => "undeclared_connection_boundary",
            Error::AliasCollision(_) => "alias_collision",
            Error::FactualityOutOfRange(_) => "factuality_out_of_range",
            Error::DuplicateHandle { .. } => "duplicate_handle",
            Error::RedirectCycle(_) => "redirect_cycle",
            Error::MixedKeyTypes { .. } => "mixed_key_types",
            Error::EmptyRow(_) => "empty_row",
            Error::UnknownOutlet(_) => "unknown_outlet",
            Error::TooFewPoints { .. } => "too_few_points",
            Error::TooFewClusters(_) => "too_few_clusters",
            Error::CoincidentCentroids(..) => "coincident_centroids",
            Error::ConstantTarget => "constant_target",
            Error::Singular => "singular",
            Error::InsufficientSamples { .. } => "insufficient_samples",
        }
    }
}
