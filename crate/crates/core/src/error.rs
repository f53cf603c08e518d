use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed corpus line {line}: {source}")]
    CorpusParse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate agent_id {agent_id:?} in slate {slate_id:?} (line {line})")]
    DuplicateAgent {
        slate_id: String,
        agent_id: String,
        line: usize,
    },
    #[error("empty trace for agent {agent_id:?}")]
    EmptyTrace { agent_id: String },
    #[error("text produced zero embedding tokens: {text:?}")]
    ZeroVector { text: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid embedding dimension {0} (need d >= 8)")]
    BadDimension(usize),
    #[error("cannot build a tree from an empty trace list")]
    NoTraces,
    #[error("node {0} is not a divergence point")]
    NotDivergence(u64),
    #[error("unknown node id {0}")]
    UnknownNode(u64),
    #[error("review packet needs at least 2 lineages, got {0}")]
    TooFewLineages(usize),
    #[error("judge reply parse failure: {0}")]
    ReplyParse(String),
    #[error("judge backend failure: {0}")]
    Backend(String),
    #[error("rubric must enable at least one criterion")]
    EmptyRubric,
    #[error("slate {0:?} has no votable answers")]
    NoAnswers(String),
    #[error("slate {0:?} is missing a gold answer")]
    MissingGold(String),
    #[error("non-finite loss input: {0}")]
    NonFinite(&'static str),
    #[error("beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("preference training needs at least {need} triplets, got {got}")]
    TooFewTriplets { need: usize, got: usize },
    #[error("non-separable preference data: chosen and rejected features are identical on every triplet")]
    NonSeparable,
    #[error("simulation requires n_err > n_cor >= 1, got n_err={n_err}, n_cor={n_cor}")]
    BadConfabulationRegime { n_err: usize, n_cor: usize },
    #[error("invalid config key {key:?}: {reason}")]
    Config { key: String, reason: String },
    #[error("io error on {path:?}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("results and slates are misaligned: {0}")]
    Misaligned(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
