//! Differentiable log-mel features with an exact vector-Jacobian product
//! back to waveform samples.
//!
//! Fixed configuration: 25 ms Hamming-windowed frames, 10 ms hop, 512-point
//! DFT (257 bins), 40 mel filters spanning 0-8 kHz, log floor 1e-8. The
//! whole transform is a composition of linear maps, a square and a log, so
//! the reverse-mode derivative is computed in closed form.

use std::sync::OnceLock;

use ndarray::{Array1, Array2};

use crate::audio::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const FRAME_LEN: usize = 400;
pub const FRAME_HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const N_BINS: usize = N_FFT / 2 + 1;
pub const N_MELS: usize = 40;
pub const LOG_FLOOR: f64 = 1e-8;

/// Log-mel energies, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    frames: Array2<f64>,
}

impl Features {
    pub fn from_matrix(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != N_MELS {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix has {} columns, expected {N_MELS}",
                frames.ncols()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite feature entry".into()));
        }
        Ok(Self { frames })
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn n_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// Frames obtainable from an `n`-sample input: 1 + floor((n - 400) / 160).
pub fn n_frames_for(samples: usize) -> Result<usize> {
    if samples < FRAME_LEN {
        return Err(Error::Parameter(format!(
            "input of {samples} samples is shorter than one frame ({FRAME_LEN})"
        )));
    }
    Ok(1 + (samples - FRAME_LEN) / FRAME_HOP)
}

struct Tables {
    window: Array1<f64>,
    /// (FRAME_LEN, N_BINS): column k holds cos(2 pi k i / N_FFT).
    cos: Array2<f64>,
    /// (FRAME_LEN, N_BINS): column k holds sin(2 pi k i / N_FFT).
    sin: Array2<f64>,
    /// (N_BINS, N_MELS): triangular mel filters, transposed for row-major GEMM.
    mel: Array2<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let window = Array1::from_shape_fn(FRAME_LEN, |n| {
            0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / (FRAME_LEN - 1) as f64).cos()
        });
        let cos = Array2::from_shape_fn((FRAME_LEN, N_BINS), |(i, k)| {
            (2.0 * std::f64::consts::PI * k as f64 * i as f64 / N_FFT as f64).cos()
        });
        let sin = Array2::from_shape_fn((FRAME_LEN, N_BINS), |(i, k)| {
            (2.0 * std::f64::consts::PI * k as f64 * i as f64 / N_FFT as f64).sin()
        });

        // Triangular filters with edges equally spaced on the mel scale
        // between 0 Hz and Nyquist.
        let f_max = SAMPLE_RATE as f64 / 2.0;
        let mel_pts: Vec<f64> = (0..N_MELS + 2)
            .map(|i| mel_to_hz(hz_to_mel(f_max) * i as f64 / (N_MELS + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let mut mel = Array2::zeros((N_BINS, N_MELS));
        for j in 0..N_MELS {
            let (lo, mid, hi) = (mel_pts[j], mel_pts[j + 1], mel_pts[j + 2]);
            for k in 0..N_BINS {
                let f = k as f64 * bin_hz;
                let v = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
                if v > 0.0 {
                    mel[(k, j)] = v;
                }
            }
        }
        Tables { window, cos, sin, mel }
    })
}

struct ForwardPass {
    re: Array2<f64>,
    im: Array2<f64>,
    mel_energy: Array2<f64>,
}

fn forward(samples: &[f64]) -> Result<(ForwardPass, Array2<f64>)> {
    let t = n_frames_for(samples.len())?;
    let tb = tables();
    let mut windowed = Array2::zeros((t, FRAME_LEN));
    for f in 0..t {
        let at = f * FRAME_HOP;
        for i in 0..FRAME_LEN {
            windowed[(f, i)] = samples[at + i] * tb.window[i];
        }
    }
    let re = windowed.dot(&tb.cos);
    let im = {
        let mut im = windowed.dot(&tb.sin);
        im.mapv_inplace(|v| -v);
        im
    };
    let power = &re * &re + &im * &im;
    let mel_energy = power.dot(&tb.mel);
    let log_mel = mel_energy.mapv(|v| (v + LOG_FLOOR).ln());
    Ok((ForwardPass { re, im, mel_energy }, log_mel))
}

/// Log-mel features of a waveform (errors if shorter than one frame).
pub fn log_mel(w: &Waveform) -> Result<Features> {
    let (_, lm) = forward(w.samples())?;
    Features::from_matrix(lm)
}

/// Log-mel features of a raw sample buffer (used by perturbation probes,
/// which may step outside the `[-1, 1]` waveform invariant).
pub fn log_mel_raw(samples: &[f64]) -> Result<Array2<f64>> {
    let (_, lm) = forward(samples)?;
    Ok(lm)
}

/// Exact reverse-mode derivative of [`log_mel`] at `w` applied to
/// `upstream`, returning a waveform-shaped gradient.
pub fn log_mel_vjp(w: &Waveform, upstream: &Array2<f64>) -> Result<Vec<f64>> {
    log_mel_vjp_raw(w.samples(), upstream)
}

/// Raw-buffer variant of [`log_mel_vjp`].
pub fn log_mel_vjp_raw(samples: &[f64], upstream: &Array2<f64>) -> Result<Vec<f64>> {
    let (fp, _) = forward(samples)?;
    let t = fp.re.nrows();
    if upstream.dim() != (t, N_MELS) {
        return Err(Error::ShapeMismatch(format!(
            "upstream {:?} does not match feature shape ({t}, {N_MELS})",
            upstream.dim()
        )));
    }
    let tb = tables();
    // d log(m + floor) = dm / (m + floor)
    let d_mel = upstream / fp.mel_energy.mapv(|v| v + LOG_FLOOR);
    let d_power = d_mel.dot(&tb.mel.t());
    let d_re = 2.0 * &fp.re * &d_power;
    let d_im = 2.0 * &fp.im * &d_power;
    // re = W C, im = -(W S)  =>  dW = dRe C^T - dIm S^T
    let d_windowed = d_re.dot(&tb.cos.t()) - d_im.dot(&tb.sin.t());

    let mut grad = vec![0.0; samples.len()];
    for f in 0..t {
        let at = f * FRAME_HOP;
        for i in 0..FRAME_LEN {
            grad[at + i] += d_windowed[(f, i)] * tb.window[i];
        }
    }
    Ok(grad)
}
