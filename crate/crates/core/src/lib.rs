//! Word-level adversarial audio toolkit.
//!
//! The crate implements an end-to-end pipeline for crafting and evaluating
//! contextualized (delete / insert / substitute) adversarial examples
//! against small CTC-attention speech recognizers:
//!
//! * [`audio`] — waveforms, WAV I/O, filtering, tapered concatenation,
//!   l-inf projection and SNR.
//! * [`frontend`] — differentiable log-mel features with an exact
//!   vector-Jacobian product back to the waveform.
//! * [`model`] — two toy trainable CTC-attention architectures, joint loss,
//!   greedy decoding and end-to-end input gradients.
//! * [`align`] — CTC forced alignment mapping transcript words to frame and
//!   sample spans.
//! * [`synth`] — deterministic parametric word synthesizer and corpus
//!   generator (doubles as the target-word audio source).
//! * [`attack`] — target-label construction, local initialization, the
//!   momentum iterative sign-gradient optimizer and the two-stage
//!   local-to-global attack.
//! * [`asm`] — score-matching fine-tuning of the surrogate model with
//!   Hutchinson trace estimation over finite differences.
//! * [`eval`] — metrics (SRoA / CER / MED / SNR), local, stub and remote
//!   transcription endpoints, and the transfer-experiment harness.

pub mod align;
pub mod asm;
pub mod attack;
pub mod audio;
pub mod config;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod model;
pub mod synth;
pub(crate) mod util;

pub use error::{Error, Result};
