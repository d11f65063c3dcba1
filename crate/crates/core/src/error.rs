use thiserror::Error;

/// Errors surfaced by the simulator and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite state")]
    NonFiniteState,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("horizon exceeded: asked for {requested} steps from a sequence of {available}")]
    HorizonExceeded { requested: usize, available: usize },

    #[error("sequence length {got} != N = {expected}")]
    SequenceLength { expected: usize, got: usize },

    #[error("probability {0} outside (0, 1)")]
    Probability(f64),

    #[error("invalid distribution parameters: {0}")]
    Distribution(String),

    #[error("duplicate activation tick {tick} on the {tier} link")]
    DuplicateActivation { tier: &'static str, tick: u64 },

    #[error("degenerate sampling region")]
    DegenerateRegion,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("trace must cover at least {0} ticks")]
    TraceTooShort(usize),

    #[error("i/o: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
