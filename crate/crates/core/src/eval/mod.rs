//! Metrics, transcription targets, and the transfer-experiment harness.

pub mod experiment;
pub mod metrics;
pub mod transcribe;

pub use experiment::{generate_batch, run_experiment, BatchItem, MethodSpec, Record, Report, ReportRow};
pub use metrics::{cer, edit_distance, judge_sroa, med, word_accuracy};
pub use transcribe::{
    HttpResponse, HttpTransport, RateLimiter, RemoteTranscriber, ReqwestTransport, RetryPolicy,
    StubTranscriber, TranscribeOutcome, Transcriber,
};
