//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// WAV file does not match the required RIFF/PCM-16/mono/16 kHz layout.
    #[error("unsupported audio format: {0}")]
    Format(String),

    /// A caller-supplied argument violates an operation precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Two buffers that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// The CTC target cannot be aligned within the available frames.
    #[error("infeasible alignment: target needs {needed} frames, got {got}")]
    InfeasibleAlignment { needed: usize, got: usize },

    /// A gradient or loss became non-finite.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Training or fine-tuning diverged.
    #[error("training error: {0}")]
    Training(String),

    /// SNR is undefined for an all-zero clean signal.
    #[error("undefined signal: {0}")]
    UndefinedSignal(String),

    /// Endpoint configuration is unusable (e.g. missing credential).
    #[error("configuration error: {0}")]
    Configuration(String),

    /// Remote transcriber rejected the credentials.
    #[error("authentication failed: HTTP {0}")]
    Auth(u16),

    /// Remote transcriber did not answer within the retry budget.
    #[error("timeout after {attempts} attempts: {reason}")]
    Timeout { attempts: u32, reason: String },

    /// Remote transcriber answered with a body we cannot parse.
    #[error("malformed response: {0}")]
    MalformedResponse(String),

    /// Remote transcriber answered with an unexpected status.
    #[error("transport error: {0}")]
    Transport(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
