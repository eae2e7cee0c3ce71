//! Waveform representation, WAV I/O, filtering, edge-tapered concatenation,
//! l-inf projection and SNR.
//!
//! All audio in the toolkit is mono 16 kHz with samples in `[-1, 1]`. Every
//! operation here is a pure function over sample buffers, so concurrent use
//! is safe.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::OnceLock;

use crate::attack::AttackType;
use crate::error::{Error, Result};

/// The only sample rate the toolkit works at.
pub const SAMPLE_RATE: u32 = 16_000;

/// Number of taps of the 7 kHz high-pass FIR.
const HIGHPASS_TAPS: usize = 101;
/// High-pass cutoff frequency in Hz.
const HIGHPASS_CUTOFF: f64 = 7_000.0;

/// Mono audio at 16 kHz, samples clipped to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
}

impl Waveform {
    /// Builds a waveform, clipping samples into `[-1, 1]`.
    ///
    /// Non-finite samples are rejected.
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if let Some(bad) = samples.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numerical(format!("non-finite sample {bad}")));
        }
        let samples = samples.into_iter().map(|s| s.clamp(-1.0, 1.0)).collect();
        Ok(Self { samples })
    }

    /// All-zero waveform of the given length.
    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }

    /// Copy of the samples in `span`.
    pub fn slice(&self, span: SampleSpan) -> Result<Waveform> {
        span.validate(self.len())?;
        Ok(Waveform {
            samples: self.samples[span.start..span.end].to_vec(),
        })
    }

    /// Copy of the samples in `range` (empty ranges allowed).
    pub fn slice_range(&self, start: usize, end: usize) -> Result<Waveform> {
        if start > end || end > self.len() {
            return Err(Error::Parameter(format!(
                "slice [{start}, {end}) out of bounds for length {}",
                self.len()
            )));
        }
        Ok(Waveform {
            samples: self.samples[start..end].to_vec(),
        })
    }
}

/// Half-open sample interval `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SampleSpan {
    pub start: usize,
    pub end: usize,
}

impl SampleSpan {
    pub fn new(start: usize, end: usize) -> Result<Self> {
        if start >= end {
            return Err(Error::Parameter(format!(
                "span start {start} must be < end {end}"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Checks `0 <= start < end <= waveform_len`.
    pub fn validate(&self, waveform_len: usize) -> Result<()> {
        if self.start >= self.end || self.end > waveform_len {
            return Err(Error::Parameter(format!(
                "span [{}, {}) invalid for waveform of length {waveform_len}",
                self.start, self.end
            )));
        }
        Ok(())
    }
}

// ── WAV I/O ──────────────────────────────────────────────────────────────
//
// RIFF, PCM 16-bit mono 16 kHz little-endian. Parsing walks the chunk list
// so extra chunks (LIST, fact, ...) are tolerated.

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Reads a mono 16-bit 16 kHz PCM WAV file, scaling samples by 1/32768.
pub fn wav_read(path: &Path) -> Result<Waveform> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 44 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    let mut at = 12;
    while at + 8 <= bytes.len() {
        let id = &bytes[at..at + 4];
        let size = read_u32(&bytes, at + 4) as usize;
        let body_at = at + 8;
        if body_at + size > bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated chunk {:?}",
                path.display(),
                String::from_utf8_lossy(id)
            )));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format(format!(
                        "{}: fmt chunk too small",
                        path.display()
                    )));
                }
                fmt = Some((
                    read_u16(&bytes, body_at),
                    read_u16(&bytes, body_at + 2),
                    read_u32(&bytes, body_at + 4),
                    read_u16(&bytes, body_at + 14),
                ));
            }
            b"data" => data = Some(&bytes[body_at..body_at + size]),
            _ => {}
        }
        // Chunks are word-aligned.
        at = body_at + size + (size & 1);
    }

    let (format, channels, rate, bits) = fmt
        .ok_or_else(|| Error::Format(format!("{}: missing fmt chunk", path.display())))?;
    if format != 1 {
        return Err(Error::Format(format!("format code {format}, expected PCM")));
    }
    if channels != 1 {
        return Err(Error::Format(format!("{channels} channels, expected mono")));
    }
    if rate != SAMPLE_RATE {
        return Err(Error::Format(format!("{rate} Hz, expected {SAMPLE_RATE}")));
    }
    if bits != 16 {
        return Err(Error::Format(format!("{bits}-bit, expected 16-bit")));
    }
    let data =
        data.ok_or_else(|| Error::Format(format!("{}: missing data chunk", path.display())))?;

    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
        .collect();
    Ok(Waveform { samples })
}

/// Encodes a waveform as mono 16-bit 16 kHz PCM bytes, round-to-nearest.
pub fn wav_bytes(w: &Waveform) -> Vec<u8> {
    let data_len = (w.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + w.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &w.samples {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round() as i32;
        let q = q.clamp(i16::MIN as i32, i16::MAX as i32) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Writes a waveform as mono 16-bit 16 kHz PCM, round-to-nearest.
pub fn wav_write(w: &Waveform, path: &Path) -> Result<()> {
    std::fs::File::create(path)?.write_all(&wav_bytes(w))?;
    Ok(())
}

// ── Filtering and tapering ───────────────────────────────────────────────

fn highpass_kernel() -> &'static [f64; HIGHPASS_TAPS] {
    static KERNEL: OnceLock<[f64; HIGHPASS_TAPS]> = OnceLock::new();
    KERNEL.get_or_init(|| {
        let m = (HIGHPASS_TAPS - 1) / 2;
        let fc = HIGHPASS_CUTOFF / SAMPLE_RATE as f64;
        // Blackman-windowed sinc low-pass (deep stopband), normalized to
        // unity DC gain, then spectrally inverted.
        let mut lp = [0.0; HIGHPASS_TAPS];
        for (n, tap) in lp.iter_mut().enumerate() {
            let k = n as f64 - m as f64;
            let sinc = if k == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * k).sin() / (std::f64::consts::PI * k)
            };
            let phase = 2.0 * std::f64::consts::PI * n as f64 / (HIGHPASS_TAPS - 1) as f64;
            let win = 0.42 - 0.5 * phase.cos() + 0.08 * (2.0 * phase).cos();
            *tap = sinc * win;
        }
        let sum: f64 = lp.iter().sum();
        let mut hp = [0.0; HIGHPASS_TAPS];
        for (n, tap) in hp.iter_mut().enumerate() {
            *tap = -lp[n] / sum;
        }
        hp[m] += 1.0;
        hp
    })
}

/// Linear-phase 101-tap high-pass at 7 kHz, zero-phase via group-delay
/// compensation; output has the same length as the input.
pub fn highpass_7k(w: &Waveform) -> Waveform {
    let h = highpass_kernel();
    let m = (HIGHPASS_TAPS - 1) as i64 / 2;
    let n = w.len() as i64;
    let mut out = vec![0.0; w.len()];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (k, &hk) in h.iter().enumerate() {
            let j = i as i64 + m - k as i64;
            if j >= 0 && j < n {
                acc += hk * w.samples[j as usize];
            }
        }
        *o = acc;
    }
    // The kernel has unity gain at Nyquist and is DC-blocking, so the output
    // cannot exceed [-1, 1] by more than ringing; clamp keeps the invariant.
    Waveform::new(out).expect("filter output is finite")
}

/// Rising half-Hamming ramp of length `len`: 0.54 - 0.46 cos(pi n / (len-1)).
fn half_hamming(len: usize) -> Vec<f64> {
    let denom = len.saturating_sub(1).max(1) as f64;
    (0..len)
        .map(|n| 0.54 - 0.46 * (std::f64::consts::PI * n as f64 / denom).cos())
        .collect()
}

/// Multiplies the first and last `ramp_len` samples by rising/falling
/// half-Hamming ramps; interior samples are untouched.
pub fn edge_taper(w: &Waveform, ramp_len: usize) -> Result<Waveform> {
    if 2 * ramp_len > w.len() {
        return Err(Error::Parameter(format!(
            "ramp {ramp_len} too long for fragment of length {}",
            w.len()
        )));
    }
    let mut samples = w.samples.clone();
    let ramp = half_hamming(ramp_len);
    let n = samples.len();
    for i in 0..ramp_len {
        samples[i] *= ramp[i];
        samples[n - 1 - i] *= ramp[i];
    }
    Ok(Waveform { samples })
}

/// Edge-tapers each fragment, then concatenates end-to-end (no overlap).
///
/// Zero-length fragments contribute nothing; a fragment shorter than
/// `2 * ramp_len` is tapered with the longest ramp it can hold.
pub fn concat_fragments(fragments: &[Waveform], ramp_len: usize) -> Result<Waveform> {
    if fragments.is_empty() {
        return Err(Error::Parameter("empty fragment list".into()));
    }
    let total: usize = fragments.iter().map(Waveform::len).sum();
    let mut samples = Vec::with_capacity(total);
    for frag in fragments {
        if frag.is_empty() {
            continue;
        }
        let ramp = ramp_len.min(frag.len() / 2);
        let tapered = edge_taper(frag, ramp)?;
        samples.extend_from_slice(&tapered.samples);
    }
    Ok(Waveform { samples })
}

/// Moves every sample of `w` to the nearest point within `delta` of
/// `center`, then clips to `[-1, 1]`.
pub fn project(w: &Waveform, center: &Waveform, delta: f64) -> Result<Waveform> {
    if w.len() != center.len() {
        return Err(Error::ShapeMismatch(format!(
            "project: {} vs {} samples",
            w.len(),
            center.len()
        )));
    }
    let samples = w
        .samples
        .iter()
        .zip(&center.samples)
        .map(|(&x, &c)| x.clamp(c - delta, c + delta).clamp(-1.0, 1.0))
        .collect();
    Ok(Waveform { samples })
}

/// SNR ceiling reported when the noise power is below 1e-12.
pub const SNR_CAP_DB: f64 = 120.0;

/// Signal-to-noise ratio in dB between a clean waveform and its adversarial
/// counterpart.
///
/// For insertion attacks the clean signal is first zero-padded at
/// `span.start` by the inserted length so the two waveforms line up; delete
/// and substitute require equal lengths.
pub fn snr_db(
    clean: &Waveform,
    adv: &Waveform,
    attack_type: AttackType,
    span: SampleSpan,
) -> Result<f64> {
    let aligned: Vec<f64> = match attack_type {
        AttackType::Delete | AttackType::Substitute => {
            if clean.len() != adv.len() {
                return Err(Error::ShapeMismatch(format!(
                    "snr: {} vs {} samples",
                    clean.len(),
                    adv.len()
                )));
            }
            clean.samples.clone()
        }
        AttackType::Insert => {
            if adv.len() < clean.len() || span.start > clean.len() {
                return Err(Error::ShapeMismatch(format!(
                    "snr(insert): adv {} shorter than clean {} or span start {} out of range",
                    adv.len(),
                    clean.len(),
                    span.start
                )));
            }
            let inserted = adv.len() - clean.len();
            let mut padded = Vec::with_capacity(adv.len());
            padded.extend_from_slice(&clean.samples[..span.start]);
            padded.extend(std::iter::repeat(0.0).take(inserted));
            padded.extend_from_slice(&clean.samples[span.start..]);
            padded
        }
    };

    let p_clean: f64 = clean.samples.iter().map(|s| s * s).sum();
    if p_clean == 0.0 {
        return Err(Error::UndefinedSignal("clean signal is all zero".into()));
    }
    let p_noise: f64 = adv
        .samples
        .iter()
        .zip(&aligned)
        .map(|(a, c)| (a - c) * (a - c))
        .sum();
    if p_noise < 1e-12 {
        Ok(SNR_CAP_DB)
    } else {
        Ok(10.0 * (p_clean / p_noise).log10())
    }
}
