use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: field `{field}`: {message}")]
    InvalidField {
        line: usize,
        field: String,
        message: String,
    },

    #[error("line {line}: duplicate record (problem `{problem_id}`, teacher `{teacher_id}`, rollout {rollout_id})")]
    DuplicateRecord {
        line: usize,
        problem_id: String,
        teacher_id: String,
        rollout_id: u32,
    },

    #[error("line {line}: k_ext {found} differs from the dataset's k_ext {expected}")]
    MixedExtractionCap {
        line: usize,
        expected: u32,
        found: u32,
    },

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("unbounded token ratio: surprisal {surprisal:e} at token {index} is not above the zero guard")]
    UnboundedTokenRatio { index: usize, surprisal: f64 },

    #[error("trajectory has no tokens")]
    EmptyTrajectory,

    #[error("total surprisal {total:e} is not above the zero guard")]
    ZeroSurprisal { total: f64 },

    #[error("extraction cap below clip threshold (k_ext {k_ext} < r_max {r_max})")]
    CapBelowClip { k_ext: u32, r_max: u32 },

    #[error("local surprisal unavailable at token {index}")]
    MissingLocalSurprisal { index: usize },

    #[error("entropy unavailable at token {index}")]
    MissingEntropy { index: usize },

    #[error("unclipped average rank requested on data with saturated ranks (fraction {fraction:.4})")]
    SaturatedRanks { fraction: f64 },

    #[error("dataset has no records")]
    EmptyDataset,

    #[error("record {record} has no text")]
    MissingText { record: String },

    #[error("record {record} has no correctness label")]
    MissingLabel { record: String },

    #[error("external score `{column}` missing on: {}", records.join(", "))]
    MissingExternalScore { column: String, records: Vec<String> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("sample of {requested} requested from {available} records")]
    SampleTooLarge { requested: usize, available: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("correlation needs at least 3 points, got {0}")]
    TooFewPoints(usize),

    #[error("constant vector has no rank or product-moment correlation")]
    ConstantVector,

    #[error("non-finite value {value} for `{what}`")]
    NonFinite { what: String, value: f64 },

    #[error("missing cells: {}", cells.join(", "))]
    MissingCells { cells: Vec<String> },

    #[error("unknown metric `{0}`")]
    UnknownMetric(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
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
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// True for errors caused by the caller's inputs rather than by I/O.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io(_) => false,
            Error::Context { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}
