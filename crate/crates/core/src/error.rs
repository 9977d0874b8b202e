use thiserror::Error;

/// Errors produced across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("signal has zero Euclidean norm")]
    ZeroSignal,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("lag {lag} is too large for a signal of length {len}")]
    LagTooLarge { lag: usize, len: usize },
    #[error("regressor matrix is rank deficient (singular value ratio {ratio:.3e})")]
    RankDeficient { ratio: f64 },
    #[error("generated signal is identically zero")]
    DegenerateSignal,
    #[error("K = {k} is outside 1..={t}")]
    BadK { k: usize, t: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("input is constant; correlation is undefined")]
    ConstantInput,
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("too many diverged runs: {failed} of {total}")]
    TooManyDiverged { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
