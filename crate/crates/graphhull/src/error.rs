use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed edge record `{text}` (expected two whitespace-separated node ids)")]
    MalformedEdge { line: usize, text: String },

    #[error("line {line}: self-loop on node `{node}`")]
    SelfLoop { line: usize, node: String },

    #[error("edge ({i}, {j}) out of range for a graph on {n} nodes")]
    EdgeOutOfRange { i: usize, j: usize, n: usize },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("holdout fraction must lie strictly inside (0, 1), got {0}")]
    BadHoldoutFraction(f64),

    #[error("cannot sample {needed} distinct non-edges: only {available} exist")]
    NotEnoughNonEdges { needed: usize, available: usize },

    #[error("invalid hyperparameters: {0}")]
    BadHyperparams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{block} is rank-deficient: orthonormalization pivot {pivot:.3e} at column {col}")]
    RankDeficient {
        block: &'static str,
        pivot: f64,
        col: usize,
    },

    #[error("temperature must be positive, got {0}")]
    BadTemperature(f64),

    #[error("row {row} of the vertex matrix has zero norm; normalization undefined")]
    ZeroVertexRow { row: usize },

    #[error("non-finite gradient in block {block}")]
    NonFiniteGradient { block: &'static str },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("graph too small: {0}")]
    GraphTooSmall(String),

    #[error("state invariant violated: {0}")]
    StateInvariant(String),

    #[error("simplex row {row} violates the simplex constraints by {violation:.3e}")]
    OffSimplex { row: usize, violation: f64 },

    #[error("node pair ({i}, {j}) outside model range (n_nodes = {n})")]
    PairOutOfRange { i: usize, j: usize, n: usize },

    #[error("unknown node id `{0}` (not present in the model's label map)")]
    UnknownNodeId(String),

    #[error("label vectors have mismatched lengths: {0} vs {1}")]
    LabelLengthMismatch(usize, usize),

    #[error("scores require both classes, got {positives} positives and {negatives} negatives")]
    SingleClassLabels { positives: usize, negatives: usize },

    #[error("feasibility solver failed: {0}")]
    LpFailure(String),

    #[error("invalid model file: {0}")]
    BadModel(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
