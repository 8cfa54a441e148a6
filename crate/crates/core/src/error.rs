use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("tape error: {0}")]
    Tape(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("corrupt stream: {0}")]
    Corrupt(String),
    #[error("truncated stream: need {need} more bytes ({context})")]
    Truncated { need: usize, context: &'static str },
    #[error("model fingerprint mismatch: stream has {stream:016x}, model is {model:016x}")]
    Fingerprint { stream: u64, model: u64 },
    #[error("symbol out of range on channel {channel}: value {value} outside [{lo}, {hi}]")]
    SymbolRange {
        channel: usize,
        value: i64,
        lo: i64,
        hi: i64,
    },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl Error {
    /// Process exit code for the CLI: 3 for bad input data, 4 for a stream
    /// that fails to parse or verify. Usage errors exit 2 via clap before
    /// any of this runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format(_)
            | Error::Corrupt(_)
            | Error::Truncated { .. }
            | Error::Fingerprint { .. }
            | Error::SymbolRange { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
