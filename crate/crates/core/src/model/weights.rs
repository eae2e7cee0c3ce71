//! Weight containers shared by parameters, gradients and optimizer state.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ArchTag, CONV_KERNEL, ENC_DIM, RNN_DIM};
use crate::frontend::N_MELS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvWeights {
    pub w1: Array2<f64>, // (KERNEL * N_MELS, ENC_DIM)
    pub b1: Array1<f64>,
    pub w2: Array2<f64>, // (KERNEL * ENC_DIM, ENC_DIM)
    pub b2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnWeights {
    pub wx_f: Array2<f64>, // (N_MELS, RNN_DIM)
    pub wh_f: Array2<f64>, // (RNN_DIM, RNN_DIM)
    pub b_f: Array1<f64>,
    pub wx_b: Array2<f64>,
    pub wh_b: Array2<f64>,
    pub b_b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EncoderWeights {
    Conv(ConvWeights),
    Rnn(RnnWeights),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecoderWeights {
    pub embed: Array2<f64>, // (V + 2, ENC_DIM)
    pub wq: Array2<f64>,    // (ENC_DIM, ENC_DIM)
    pub bq: Array1<f64>,
    pub wo: Array2<f64>, // (2 * ENC_DIM, V + 2)
    pub bo: Array1<f64>,
}

/// Full weight set. The same structure carries parameters, gradients and
/// momentum buffers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    pub enc: EncoderWeights,
    pub ctc_w: Array2<f64>, // (ENC_DIM, V + 1)
    pub ctc_b: Array1<f64>,
    pub dec: DecoderWeights,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    let limit = scale * (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl WeightSet {
    /// Seeded initialization; field order is fixed so the draw is
    /// reproducible.
    pub fn init(arch: ArchTag, vocab_words: usize, rng: &mut ChaCha8Rng) -> Self {
        let v = vocab_words;
        let enc = match arch {
            ArchTag::ConvNetA => EncoderWeights::Conv(ConvWeights {
                w1: xavier(rng, CONV_KERNEL * N_MELS, ENC_DIM, 1.0),
                b1: Array1::zeros(ENC_DIM),
                w2: xavier(rng, CONV_KERNEL * ENC_DIM, ENC_DIM, 1.0),
                b2: Array1::zeros(ENC_DIM),
            }),
            ArchTag::RecurrentB => EncoderWeights::Rnn(RnnWeights {
                wx_f: xavier(rng, N_MELS, RNN_DIM, 1.0),
                // Recurrent matrices start small to keep BPTT stable.
                wh_f: xavier(rng, RNN_DIM, RNN_DIM, 0.5),
                b_f: Array1::zeros(RNN_DIM),
                wx_b: xavier(rng, N_MELS, RNN_DIM, 1.0),
                wh_b: xavier(rng, RNN_DIM, RNN_DIM, 0.5),
                b_b: Array1::zeros(RNN_DIM),
            }),
        };
        WeightSet {
            enc,
            ctc_w: xavier(rng, ENC_DIM, v + 1, 1.0),
            ctc_b: Array1::zeros(v + 1),
            dec: DecoderWeights {
                embed: xavier(rng, v + 2, ENC_DIM, 1.0),
                wq: xavier(rng, ENC_DIM, ENC_DIM, 1.0),
                bq: Array1::zeros(ENC_DIM),
                wo: xavier(rng, 2 * ENC_DIM, v + 2, 1.0),
                bo: Array1::zeros(v + 2),
            },
        }
    }

    pub fn zeros_like(&self) -> Self {
        let enc = match &self.enc {
            EncoderWeights::Conv(c) => EncoderWeights::Conv(ConvWeights {
                w1: Array2::zeros(c.w1.dim()),
                b1: Array1::zeros(c.b1.dim()),
                w2: Array2::zeros(c.w2.dim()),
                b2: Array1::zeros(c.b2.dim()),
            }),
            EncoderWeights::Rnn(r) => EncoderWeights::Rnn(RnnWeights {
                wx_f: Array2::zeros(r.wx_f.dim()),
                wh_f: Array2::zeros(r.wh_f.dim()),
                b_f: Array1::zeros(r.b_f.dim()),
                wx_b: Array2::zeros(r.wx_b.dim()),
                wh_b: Array2::zeros(r.wh_b.dim()),
                b_b: Array1::zeros(r.b_b.dim()),
            }),
        };
        WeightSet {
            enc,
            ctc_w: Array2::zeros(self.ctc_w.dim()),
            ctc_b: Array1::zeros(self.ctc_b.dim()),
            dec: DecoderWeights {
                embed: Array2::zeros(self.dec.embed.dim()),
                wq: Array2::zeros(self.dec.wq.dim()),
                bq: Array1::zeros(self.dec.bq.dim()),
                wo: Array2::zeros(self.dec.wo.dim()),
                bo: Array1::zeros(self.dec.bo.dim()),
            },
        }
    }

    /// Applies `f` to every matching pair of scalars in `self` and `other`.
    pub fn zip_apply(&mut self, other: &Self, f: &mut impl FnMut(&mut f64, f64)) {
        fn z2(a: &mut Array2<f64>, b: &Array2<f64>, f: &mut impl FnMut(&mut f64, f64)) {
            a.iter_mut().zip(b.iter()).for_each(|(x, &y)| f(x, y));
        }
        fn z1(a: &mut Array1<f64>, b: &Array1<f64>, f: &mut impl FnMut(&mut f64, f64)) {
            a.iter_mut().zip(b.iter()).for_each(|(x, &y)| f(x, y));
        }
        match (&mut self.enc, &other.enc) {
            (EncoderWeights::Conv(a), EncoderWeights::Conv(b)) => {
                z2(&mut a.w1, &b.w1, f);
                z1(&mut a.b1, &b.b1, f);
                z2(&mut a.w2, &b.w2, f);
                z1(&mut a.b2, &b.b2, f);
            }
            (EncoderWeights::Rnn(a), EncoderWeights::Rnn(b)) => {
                z2(&mut a.wx_f, &b.wx_f, f);
                z2(&mut a.wh_f, &b.wh_f, f);
                z1(&mut a.b_f, &b.b_f, f);
                z2(&mut a.wx_b, &b.wx_b, f);
                z2(&mut a.wh_b, &b.wh_b, f);
                z1(&mut a.b_b, &b.b_b, f);
            }
            _ => panic!("architecture mismatch between weight sets"),
        }
        z2(&mut self.ctc_w, &other.ctc_w, f);
        z1(&mut self.ctc_b, &other.ctc_b, f);
        z2(&mut self.dec.embed, &other.dec.embed, f);
        z2(&mut self.dec.wq, &other.dec.wq, f);
        z1(&mut self.dec.bq, &other.dec.bq, f);
        z2(&mut self.dec.wo, &other.dec.wo, f);
        z1(&mut self.dec.bo, &other.dec.bo, f);
    }

    pub fn for_each(&self, f: &mut impl FnMut(f64)) {
        match &self.enc {
            EncoderWeights::Conv(c) => {
                c.w1.iter().chain(c.w2.iter()).for_each(|&v| f(v));
                c.b1.iter().chain(c.b2.iter()).for_each(|&v| f(v));
            }
            EncoderWeights::Rnn(r) => {
                r.wx_f
                    .iter()
                    .chain(r.wh_f.iter())
                    .chain(r.wx_b.iter())
                    .chain(r.wh_b.iter())
                    .for_each(|&v| f(v));
                r.b_f.iter().chain(r.b_b.iter()).for_each(|&v| f(v));
            }
        }
        self.ctc_w.iter().for_each(|&v| f(v));
        self.ctc_b.iter().for_each(|&v| f(v));
        self.dec
            .embed
            .iter()
            .chain(self.dec.wq.iter())
            .chain(self.dec.wo.iter())
            .for_each(|&v| f(v));
        self.dec.bq.iter().chain(self.dec.bo.iter()).for_each(|&v| f(v));
    }

    pub fn for_each_mut(&mut self, f: &mut impl FnMut(&mut f64)) {
        match &mut self.enc {
            EncoderWeights::Conv(c) => {
                c.w1.iter_mut().chain(c.w2.iter_mut()).for_each(&mut *f);
                c.b1.iter_mut().chain(c.b2.iter_mut()).for_each(&mut *f);
            }
            EncoderWeights::Rnn(r) => {
                r.wx_f
                    .iter_mut()
                    .chain(r.wh_f.iter_mut())
                    .chain(r.wx_b.iter_mut())
                    .chain(r.wh_b.iter_mut())
                    .for_each(&mut *f);
                r.b_f.iter_mut().chain(r.b_b.iter_mut()).for_each(&mut *f);
            }
        }
        self.ctc_w.iter_mut().for_each(&mut *f);
        self.ctc_b.iter_mut().for_each(&mut *f);
        self.dec
            .embed
            .iter_mut()
            .chain(self.dec.wq.iter_mut())
            .chain(self.dec.wo.iter_mut())
            .for_each(&mut *f);
        self.dec
            .bq
            .iter_mut()
            .chain(self.dec.bo.iter_mut())
            .for_each(&mut *f);
    }

    pub fn scale(&mut self, a: f64) {
        self.for_each_mut(&mut |x| *x *= a);
    }

    /// self += a * other
    pub fn axpy(&mut self, a: f64, other: &Self) {
        self.zip_apply(other, &mut |x, y| *x += a * y);
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        self.for_each(&mut |v| acc += v * v);
        acc.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(&mut |v| ok &= v.is_finite());
        ok
    }
}
