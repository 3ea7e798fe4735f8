//! Error type shared across the engine.

use thiserror::Error;

/// Everything that can go wrong while setting up or running a protocol.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A file (weights, input, pool cache) failed structural validation.
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },

    /// The two parties disagree on run configuration at handshake time.
    #[error("config mismatch: {0}")]
    ConfigMismatch(String),

    /// A message arrived with an unexpected tag: the parties are out of step.
    #[error("protocol desync: expected tag {expected:#06x}, got {got:#06x}")]
    Desync { expected: u16, got: u16 },

    /// A correlated-randomness pool ran dry mid-protocol.
    #[error("randomness exhausted: {0} pool")]
    RandomnessExhausted(&'static str),

    /// Waiting for the peer gave up.
    #[error("timeout: {0}")]
    Timeout(String),

    /// Dealer-output consistency audit failed.
    #[error("pool audit failed: {0}")]
    PoolAudit(String),

    /// The selected HE engine cannot perform the requested operation.
    #[error("unsupported by {engine} engine: {op}")]
    EngineUnsupported { engine: &'static str, op: &'static str },

    /// Ciphertext noise budget would be violated.
    #[error("noise budget exceeded: {0}")]
    NoiseBudget(String),

    /// A ciphertext has already consumed its multiplicative depth.
    #[error("ciphertext level exceeded (level {0})")]
    LevelExceeded(u8),

    /// Tensor/parameter dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// Catch-all for invalid arguments detected at run time.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn malformed(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Malformed { what, detail: detail.into() }
    }

    pub fn shape(detail: impl Into<String>) -> Self {
        Error::Shape(detail.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Join the two endpoints of a pair run, preferring the root cause: a party
/// that fails locally drops its endpoint and the peer dies with a timeout
/// artifact.
pub(crate) fn join_party_results<T, U>(rc: Result<T>, rs: Result<U>) -> Result<(T, U)> {
    match (rc, rs) {
        (Err(ec), Err(es)) => {
            Err(if matches!(ec, Error::Timeout(_)) && !matches!(es, Error::Timeout(_)) {
                es
            } else {
                ec
            })
        }
        (rc, rs) => Ok((rc?, rs?)),
    }
}
