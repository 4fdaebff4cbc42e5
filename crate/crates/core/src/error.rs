use thiserror::Error;

/// Errors produced by model construction, planning, learning and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid MDP: {0}")]
    InvalidMdp(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("anchor assumption violated{}: worst violation {violation:.3e}", pair_suffix(*.pair))]
    AnchorViolation { pair: Option<usize>, violation: f64 },

    #[error(
        "anchors not independent: smallest singular value {smallest:.3e} vs largest {largest:.3e}"
    )]
    AnchorsNotIndependent { smallest: f64, largest: f64 },

    #[error("anchor features have rank {rank}, need {needed}; drop redundant anchors first")]
    RankDeficient { rank: usize, needed: usize },

    #[error("corrupted sample batch: anchor {anchor} holds {got} draws, expected {expected}")]
    CorruptedBatch {
        anchor: usize,
        got: u64,
        expected: u64,
    },

    #[error("no transition row can be perturbed to reach misspecification {0}")]
    Unperturbable(f64),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn pair_suffix(pair: Option<usize>) -> String {
    match pair {
        Some(p) => format!(" at state-action pair {p}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
