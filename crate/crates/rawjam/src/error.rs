use thiserror::Error;

use crate::attack::sm4::Sm4Failure;
use crate::ciphers::CipherId;

#[derive(Debug, Error)]
pub enum Error {
    #[error("jam word {0} out of range (expected 0..=63)")]
    JamWordOutOfRange(u32),

    #[error("invalid leak model: {0}")]
    InvalidModel(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("trace set is empty")]
    EmptyTraceSet,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("trace set was produced by {found}, expected {expected}")]
    WrongCipher { expected: CipherId, found: CipherId },

    #[error("time vector is degenerate (zero variance)")]
    DegenerateTimes,

    #[error("checkpoints must be ascending, nonzero and within the trace count")]
    BadCheckpoints,

    #[error("round {round} attack is missing recovered keys for the rounds above it")]
    MissingRoundKeys { round: u8 },

    #[error("invalid key: {0}")]
    InvalidKey(String),

    #[error("bad trace file: {0}")]
    TraceFile(String),

    #[error("SM4 key recovery failed: {0}")]
    Sm4AttackFailed(Box<Sm4Failure>),

    #[error("hardware probe unavailable: {0}")]
    ProbeUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
