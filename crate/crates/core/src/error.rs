use thiserror::Error;

/// Crate-wide error type. Variants are grouped by the subsystem that raises
/// them; shape errors always name the offending operation and shapes.
#[derive(Debug, Error)]
pub enum Error {
    // ── arrays and graphs ────────────────────────────────────────────
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("class mask has {got} entries but the graph's logit nodes have {expected} classes")]
    MaskLength { got: usize, expected: usize },

    #[error("no class-logit loss node in this graph to apply a mask to")]
    NoMaskTarget,

    // ── optimizers ───────────────────────────────────────────────────
    #[error("learning rate must be positive, got {0}")]
    BadLearningRate(f64),

    #[error("momentum must be in [0, 1), got {0}")]
    BadMomentum(f64),

    #[error("weight decay must be nonnegative, got {0}")]
    BadWeightDecay(f64),

    // ── datasets and streams ─────────────────────────────────────────
    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("empty pattern section")]
    EmptyPatterns,

    #[error("bad record at line {line}: {detail}")]
    BadRecord { line: usize, detail: String },

    #[error("impossible stream layout: {0}")]
    Layout(String),

    // ── replay ───────────────────────────────────────────────────────
    #[error("replay memory is empty but {0} replay patterns per minibatch were requested")]
    EmptyMemory(usize),

    #[error("no previously seen classes to draw replay labels from")]
    EmptySeenSet,

    #[error("empty activation probe")]
    EmptyProbe,

    #[error("no stored past patterns to populate replay memory from")]
    EmptyHistory,

    // ── strategies ───────────────────────────────────────────────────
    #[error("degenerate consolidation: class {0} requires w_past but has zero current count")]
    ZeroCurrentCount(usize),

    #[error("distillation temperature must be positive, got {0}")]
    BadTemperature(f64),

    #[error("loss weight must be nonnegative: {0}")]
    BadLossWeight(String),

    // ── harness ──────────────────────────────────────────────────────
    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty eligible test set under protocol {0}")]
    EmptyTestSet(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("run failed at experience {experience}: {source}")]
    AtExperience {
        experience: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("all seeds failed: {0}")]
    AllSeedsFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach the 1-based experience index to an error bubbling out of a
    /// continual-learning run.
    pub fn at_experience(self, experience: usize) -> Error {
        Error::AtExperience {
            experience,
            source: Box::new(self),
        }
    }
}
