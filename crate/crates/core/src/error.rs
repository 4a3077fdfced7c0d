use thiserror::Error;

/// Errors raised anywhere in the targeting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("panel needs at least 14 days of data, got {0}")]
    WindowTooShort(usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(
        "capacity violated on day {day}: {treated} non-control assignments exceed K = {capacity}"
    )]
    Capacity {
        day: u32,
        treated: usize,
        capacity: usize,
    },

    #[error("feature {0} is undefined: every reading in the window is missing")]
    UndefinedFeature(&'static str),

    #[error("inconsistent input: {0}")]
    InconsistentInput(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("requested {requested} features but only {available} exist")]
    TopKTooLarge { requested: usize, available: usize },

    #[error("action class {class} has {count} rows, need at least {required}")]
    InsufficientSupport {
        class: usize,
        count: usize,
        required: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("need at least {required} rows, got {got}")]
    TooFewRows { required: usize, got: usize },

    #[error("ensemble needs at least two candidates, got {0}")]
    EmptyCandidates(usize),

    #[error("evaluation grid is empty or outside (0, 1]")]
    InvalidGrid,

    #[error("need at least {required} patients, got {got}")]
    TooFewPatients { required: usize, got: usize },

    #[error("oracle block unavailable")]
    MissingOracle,

    #[error("train/evaluation patient overlap: patient {0} appears in both")]
    SplitLeak(u32),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
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
    /// Whether the error stems from an invalid configuration.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
