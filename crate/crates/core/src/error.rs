use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: u64,
        message: String,
    },

    #[error("duplicate row for app `{app}` counter `{counter}`")]
    DuplicateEntry { app: String, counter: String },

    #[error("app `{app}` is missing required counter `{counter}`")]
    MissingCounter { app: String, counter: String },

    #[error("{what} must be positive, got {value}")]
    NonPositiveRuntime { what: String, value: f64 },

    #[error("app `{app}` has inconsistent t_alone_s values ({first} vs {second})")]
    InconsistentRuntime { app: String, first: f64, second: f64 },

    #[error("app `{app}` counter `{counter}`: {message}")]
    InvalidStat {
        app: String,
        counter: String,
        message: String,
    },

    #[error("unknown application `{0}`")]
    UnknownApp(String),

    #[error("no true degradation recorded for `{primary}` next to `{interfering}`")]
    UncoveredPair { primary: String, interfering: String },

    #[error("app `{app}`: cannot derive `{metric}`, denominator `{denominator}` is zero")]
    DivisionByZero {
        app: String,
        metric: String,
        denominator: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature vector length mismatch: expected {expected}, got {got}")]
    FeatureLength { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: {0} actual values vs {1} predictions")]
    LengthMismatch(usize, usize),

    #[error("actual values have zero variance; R^2 is undefined")]
    ZeroVariance,

    #[error("feature set mismatch: model uses {model}, data uses {data}")]
    FeatureSetMismatch { model: String, data: String },

    #[error("unsupported model version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    CorruptModel(String),

    #[error("least-squares system is rank deficient even with ridge regularization")]
    RankDeficient,

    #[error("graph with {n} nodes is too large for exhaustive enumeration (limit {limit})")]
    TooLarge { n: usize, limit: usize },

    #[error("not enough qualifying pairs for the {0} degradation band")]
    InsufficientPairs(String),

    #[error("schedule does not cover the queue: {0}")]
    InvalidSchedule(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable identifier, used as the `error_code` prefix by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse_error",
            Error::DuplicateEntry { .. } => "duplicate_entry",
            Error::MissingCounter { .. } => "missing_counter",
            Error::NonPositiveRuntime { .. } => "invalid_runtime",
            Error::InconsistentRuntime { .. } => "inconsistent_runtime",
            Error::InvalidStat { .. } => "invalid_stat",
            Error::UnknownApp(_) => "unknown_app",
            Error::UncoveredPair { .. } => "uncovered_pair",
            Error::DivisionByZero { .. } => "division_by_zero",
            Error::EmptyDataset => "empty_dataset",
            Error::FeatureLength { .. } => "feature_length",
            Error::InvalidParameter(_) => "invalid_parameter",
            Error::LengthMismatch(..) => "length_mismatch",
            Error::ZeroVariance => "zero_variance",
            Error::FeatureSetMismatch { .. } => "feature_set_mismatch",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CorruptModel(_) => "corrupt_model",
            Error::RankDeficient => "rank_deficient",
            Error::TooLarge { .. } => "too_large",
            Error::InsufficientPairs(_) => "insufficient_pairs",
            Error::InvalidSchedule(_) => "invalid_schedule",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}
