use thiserror::Error;

/// Errors raised by the simulator and its numeric building blocks.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label {label} out of range for {class_count} classes")]
    LabelOutOfRange { label: usize, class_count: usize },

    #[error("idx parse error: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("idx parse error: file truncated ({needed} bytes needed, {available} available)")]
    Truncated { needed: usize, available: usize },

    #[error("idx parse error: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("fit error: {0}")]
    Fit(String),

    #[error(
        "solver did not converge: max KKT violation {violation:.3e} after {iterations} iterations"
    )]
    Convergence { violation: f64, iterations: usize },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("regularizer not yet enabled")]
    RegularizerInactive,

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn at_round(self, round: usize) -> Self {
        match self {
            e @ Error::Round { .. } => e,
            e => Error::Round {
                round,
                source: Box::new(e),
            },
        }
    }
}
