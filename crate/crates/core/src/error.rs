use std::io;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the core library.
///
/// The remote extractor client has its own error type
/// ([`crate::remote::RemoteError`]) so callers can match on transport
/// failures and fall back to the local gazetteer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Io(#[from] io::Error),

    // Embedding files.
    #[error("malformed embedding header {header:?}: expected \"<count> <dim>\"")]
    MalformedHeader { header: String },
    #[error("embedding row {line}: expected {expected} vector components, found {found}")]
    RowArity {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("embedding row {line}: non-numeric component {value:?}")]
    NonNumeric { line: usize, value: String },
    #[error("embedding row {line}: empty token")]
    EmptyToken { line: usize },
    #[error("embedding file truncated: header declares {declared} rows, found {found}")]
    TruncatedEmbeddings { declared: usize, found: usize },
    #[error("embedding table is empty")]
    EmptyEmbeddingTable,

    // Encoder and checkpoints.
    #[error("input has {rows} rows but the convolution window is {window}")]
    InputShorterThanWindow { rows: usize, window: usize },
    #[error("max-pool input has no rows")]
    EmptyPoolInput,
    #[error("query tower has {query} filters, candidate tower has {candidate}; cosine scoring needs equal widths")]
    FilterCountMismatch { query: usize, candidate: usize },
    #[error("{what} does not match the embedding dimension {dim}")]
    DimensionMismatch { what: String, dim: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bad checkpoint magic; not a model checkpoint")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint was saved against a different {side} embedding file")]
    EmbeddingProvenance { side: &'static str },

    // Training.
    #[error("training dataset is empty")]
    EmptyDataset,
    #[error("instance {index}: {reason}")]
    InvalidInstance { index: usize, reason: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    // Entities and gazetteers.
    #[error("unknown entity type {0:?}")]
    UnknownEntityType(String),
    #[error("gazetteer line {line}: {reason}")]
    InvalidGazetteerEntry { line: usize, reason: String },
    #[error("cannot draw an n-gram from text with no tokens")]
    EmptyNgramSource,

    // Corpus and dataset generation.
    #[error("corpus line {line}: {reason}")]
    InvalidCorpusRecord { line: usize, reason: String },
    #[error("corpus has {records} records; cannot build {needed}-candidate instances")]
    CorpusTooSmall { records: usize, needed: usize },
    #[error("record {0:?} has no entity cache; populate caches before generating")]
    MissingEntityCache(String),
    #[error("dataset line {line}: {reason}")]
    InvalidDatasetLine { line: usize, reason: String },
    #[error("train fraction {0} is outside (0, 1)")]
    InvalidFraction(f64),

    // Ranking and evaluation.
    #[error("ranking needs at least {needed} candidates, got {got}")]
    TooFewCandidates { needed: usize, got: usize },

    // Clustering.
    #[error("k = {k} is invalid for {n} vectors")]
    InvalidK { k: usize, n: usize },
    #[error("invalid k range [{k_min}, {k_max}] for {n} vectors")]
    InvalidKRange {
        k_min: usize,
        k_max: usize,
        n: usize,
    },
    #[error("{left} vectors but {right} names")]
    LengthMismatch { left: usize, right: usize },
    #[error("anchor {0:?} not found")]
    UnknownAnchor(String),
    #[error("silhouette needs at least two clusters")]
    SingleCluster,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
