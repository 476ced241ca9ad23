use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("loss node must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("unknown axis `{0}`")]
    UnknownAxis(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("unsupported moment powers ({0},{1},{2})")]
    UnsupportedPowers(u32, u32, u32),
    #[error("CFL violation: {0}")]
    Cfl(String),
    #[error("resource guard: {0}")]
    ResourceGuard(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
