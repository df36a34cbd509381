use thiserror::Error;

/// Errors produced by the flow construction and verification routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("singular coupling block {block}: |scale| below threshold at coordinate {coordinate}")]
    SingularBlock { block: usize, coordinate: usize },

    #[error(
        "coefficient system for coordinate {j}, multi-index {k:?} is not solvable \
         (residual {residual:.3e}, rank {rank} of {rows}; singular values {singular_values:?})"
    )]
    Solvability {
        j: usize,
        k: Vec<u32>,
        residual: f64,
        rank: usize,
        rows: usize,
        singular_values: Vec<f64>,
    },

    #[error("chunk {chunk}: {source}")]
    Chunk {
        chunk: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("least-squares fit failed: {0}")]
    Fit(String),

    #[error("degenerate order fit: {0}")]
    DegenerateFit(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// The innermost error, looking through chunk context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Chunk { source, .. } => source.root(),
            e => e,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
