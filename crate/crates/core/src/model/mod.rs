//! Toy trainable CTC-attention speech recognizers.
//!
//! Two deliberately different encoder families (temporal convnet vs
//! bidirectional recurrent net) sit under a shared CTC projection and a
//! shared attention decoder, so surrogate-to-target transfer crosses a real
//! architecture gap. The joint loss mixes CTC and attention cross-entropy
//! with a tunable weight, and every loss exposes analytic gradients down to
//! the waveform samples.

pub mod ctc;
pub(crate) mod decoder;
pub(crate) mod encoder;
pub mod train;
pub mod weights;

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::frontend::{self, Features};
use weights::WeightSet;

pub use ctc::ctc_loss;
pub use train::{train, EpochStats, TrainConfig};

/// Encoder output width.
pub const ENC_DIM: usize = 64;
/// Per-direction recurrent state width (two directions concatenate to ENC_DIM).
pub const RNN_DIM: usize = ENC_DIM / 2;
/// Temporal convolution kernel width.
pub const CONV_KERNEL: usize = 5;

const MODEL_FORMAT_VERSION: u32 = 1;

/// The two toy architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchTag {
    ConvNetA,
    RecurrentB,
}

impl std::fmt::Display for ArchTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ArchTag::ConvNetA => write!(f, "convnet-a"),
            ArchTag::RecurrentB => write!(f, "recurrent-b"),
        }
    }
}

impl std::str::FromStr for ArchTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "convnet-a" => Ok(ArchTag::ConvNetA),
            "recurrent-b" => Ok(ArchTag::RecurrentB),
            other => Err(Error::Parameter(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Word vocabulary; CTC class 0 is the blank symbol, words map to classes
/// `1..=V`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    words: Vec<String>,
}

/// Reserved blank token text.
pub const BLANK_TOKEN: &str = "<blank>";

impl Vocab {
    pub fn new(words: Vec<String>) -> Result<Self> {
        if words.len() < 2 {
            return Err(Error::Parameter("vocabulary needs at least 2 words".into()));
        }
        for (i, w) in words.iter().enumerate() {
            if w.is_empty() || w == BLANK_TOKEN || w.split_whitespace().count() != 1 {
                return Err(Error::Parameter(format!("invalid vocabulary word {w:?}")));
            }
            if words[..i].contains(w) {
                return Err(Error::Parameter(format!("duplicate vocabulary word {w:?}")));
            }
        }
        Ok(Self { words })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// Ordered token list with the blank symbol at index 0.
    pub fn tokens(&self) -> Vec<String> {
        std::iter::once(BLANK_TOKEN.to_string())
            .chain(self.words.iter().cloned())
            .collect()
    }

    /// 0-based index of a word.
    pub fn word_index(&self, word: &str) -> Option<usize> {
        self.words.iter().position(|w| w == word)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.word_index(word).is_some()
    }

    /// Decoder symbol ids: words take `0..V`, then start, then end.
    pub fn sos_sym(&self) -> usize {
        self.n_words()
    }

    pub fn eos_sym(&self) -> usize {
        self.n_words() + 1
    }

    /// CTC classes (blank = 0) for a transcript.
    pub fn ctc_classes(&self, t: &Transcript) -> Result<Vec<usize>> {
        t.words()
            .iter()
            .map(|w| {
                self.word_index(w)
                    .map(|i| i + 1)
                    .ok_or_else(|| Error::Parameter(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }

    /// 0-based word indices for a transcript.
    pub fn word_indices(&self, t: &Transcript) -> Result<Vec<usize>> {
        t.words()
            .iter()
            .map(|w| {
                self.word_index(w)
                    .ok_or_else(|| Error::Parameter(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }
}

/// Ordered word sequence (no blanks).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Transcript {
    words: Vec<String>,
}

impl Transcript {
    pub fn new(words: Vec<String>) -> Self {
        Self { words }
    }

    pub fn empty() -> Self {
        Self { words: Vec::new() }
    }

    /// Splits on whitespace.
    pub fn parse(text: &str) -> Self {
        Self {
            words: text.split_whitespace().map(str::to_string).collect(),
        }
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.iter().any(|w| w == word)
    }
}

impl std::fmt::Display for Transcript {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.words.join(" "))
    }
}

/// Joint, CTC and attention loss values for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub joint: f64,
    pub ctc: f64,
    pub attention: f64,
}

/// All weights of one toy CTC-attention model, plus its vocabulary and the
/// joint-loss mixing weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: ArchTag,
    vocab: Vocab,
    lambda: f64,
    pub(crate) weights: WeightSet,
}

/// Backward results for a loss evaluated at feature level.
pub struct LossBackward {
    pub losses: LossBreakdown,
    pub grads: WeightSet,
    pub d_feats: Array2<f64>,
}

impl ModelParams {
    /// Fresh seeded initialization.
    pub fn new_random(arch: ArchTag, vocab: Vocab, lambda: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("lambda {lambda} outside [0, 1]")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = WeightSet::init(arch, vocab.n_words(), &mut rng);
        Ok(Self { arch, vocab, lambda, weights })
    }

    pub fn arch(&self) -> ArchTag {
        self.arch
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("lambda {lambda} outside [0, 1]")));
        }
        self.lambda = lambda;
        Ok(())
    }

    /// Frame encodings (T x ENC_DIM).
    pub fn encode(&self, feats: &Features) -> Array2<f64> {
        encoder::encode_forward(&self.weights.enc, feats.matrix()).0
    }

    /// CTC head logits (T x (V + 1)) from encodings.
    pub fn ctc_logits_from(&self, enc: &Array2<f64>) -> Array2<f64> {
        let mut z = enc.dot(&self.weights.ctc_w);
        for mut row in z.rows_mut() {
            row += &self.weights.ctc_b;
        }
        z
    }

    /// CTC head logits straight from a waveform.
    pub fn ctc_frame_logits(&self, w: &Waveform) -> Result<Array2<f64>> {
        let feats = frontend::log_mel(w)?;
        Ok(self.ctc_logits_from(&self.encode(&feats)))
    }

    /// Per-frame argmax of the CTC head, collapse repeats, drop blanks.
    pub fn decode_greedy(&self, w: &Waveform) -> Result<Transcript> {
        let logits = self.ctc_frame_logits(w)?;
        let mut words = Vec::new();
        let mut prev = usize::MAX;
        for row in logits.rows() {
            let arg = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap();
            if arg != prev && arg != ctc::BLANK {
                words.push(self.vocab.words()[arg - 1].clone());
            }
            prev = arg;
        }
        Ok(Transcript::new(words))
    }

    /// Teacher-forced attention cross-entropy with start/end sentinels,
    /// summed over M + 1 steps. Returns the loss with full weight gradients
    /// and the feature gradient.
    pub fn attention_loss(&self, feats: &Features, target: &Transcript) -> Result<(f64, LossBackward)> {
        let (enc, cache) = encoder::encode_forward(&self.weights.enc, feats.matrix());
        let (loss, dec_grads, d_enc) = self.attention_parts(&enc, target, 1.0)?;
        let (enc_grads, d_feats) =
            encoder::encode_backward(&self.weights.enc, feats.matrix(), &enc, &cache, &d_enc);
        let mut grads = self.weights.zeros_like();
        grads.enc = enc_grads;
        grads.dec = dec_grads;
        let losses = LossBreakdown { joint: loss, ctc: 0.0, attention: loss };
        Ok((loss, LossBackward { losses, grads, d_feats }))
    }

    /// Attention loss over encodings, with gradients scaled by `weight`.
    fn attention_parts(
        &self,
        enc: &Array2<f64>,
        target: &Transcript,
        weight: f64,
    ) -> Result<(f64, weights::DecoderWeights, Array2<f64>)> {
        let word_syms = self.vocab.word_indices(target)?;
        let mut prev = Vec::with_capacity(word_syms.len() + 1);
        prev.push(self.vocab.sos_sym());
        prev.extend_from_slice(&word_syms);
        let mut tgts = word_syms;
        tgts.push(self.vocab.eos_sym());

        let steps = decoder::decoder_forward(&self.weights.dec, enc, &prev);
        let mut loss = 0.0;
        let d_logits: Vec<Array1<f64>> = steps
            .iter()
            .zip(&tgts)
            .map(|(s, &y)| {
                loss -= s.probs[y].ln();
                let mut d = s.probs.mapv(|p| p * weight);
                d[y] -= weight;
                d
            })
            .collect();
        let (dec_grads, d_enc) = decoder::decoder_backward(&self.weights.dec, enc, &steps, &d_logits);
        Ok((loss, dec_grads, d_enc))
    }

    /// Joint loss backward at feature level: `lambda * ctc + (1 - lambda) * att`
    /// with gradients for every weight and for the features.
    pub fn loss_backward(
        &self,
        feats: &Features,
        target: &Transcript,
        lambda: f64,
    ) -> Result<LossBackward> {
        let x = feats.matrix();
        let (enc, cache) = encoder::encode_forward(&self.weights.enc, x);

        // CTC branch.
        let logits = self.ctc_logits_from(&enc);
        let classes = self.vocab.ctc_classes(target)?;
        let (ctc_l, d_logits) = ctc::ctc_loss(&logits, &classes)?;
        let mut d_enc = d_logits.dot(&self.weights.ctc_w.t());
        d_enc.mapv_inplace(|v| v * lambda);
        let d_ctc_w = {
            let mut g = enc.t().dot(&d_logits);
            g.mapv_inplace(|v| v * lambda);
            g
        };
        let d_ctc_b = d_logits.sum_axis(ndarray::Axis(0)).mapv(|v| v * lambda);

        // Attention branch (gradients pre-scaled by 1 - lambda).
        let (att_l, dec_grads, d_enc_att) = self.attention_parts(&enc, target, 1.0 - lambda)?;
        d_enc += &d_enc_att;

        let (enc_grads, d_feats) =
            encoder::encode_backward(&self.weights.enc, x, &enc, &cache, &d_enc);

        let mut grads = self.weights.zeros_like();
        grads.enc = enc_grads;
        grads.ctc_w = d_ctc_w;
        grads.ctc_b = d_ctc_b;
        grads.dec = dec_grads;

        let losses = LossBreakdown {
            joint: lambda * ctc_l + (1.0 - lambda) * att_l,
            ctc: ctc_l,
            attention: att_l,
        };
        Ok(LossBackward { losses, grads, d_feats })
    }

    /// Joint loss and its gradient with respect to the waveform samples,
    /// using the model's own mixing weight.
    pub fn joint_loss(&self, w: &Waveform, target: &Transcript) -> Result<(LossBreakdown, Vec<f64>)> {
        self.joint_loss_with_lambda(w, target, self.lambda)
    }

    /// Joint loss with an explicit mixing weight.
    pub fn joint_loss_with_lambda(
        &self,
        w: &Waveform,
        target: &Transcript,
        lambda: f64,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        self.joint_loss_raw(w.samples(), target, lambda)
    }

    /// Raw-buffer variant used by finite-difference probes.
    pub fn joint_loss_raw(
        &self,
        samples: &[f64],
        target: &Transcript,
        lambda: f64,
    ) -> Result<(LossBreakdown, Vec<f64>)> {
        let lm = frontend::log_mel_raw(samples)?;
        let feats = Features::from_matrix(lm)?;
        let back = self.loss_backward(&feats, target, lambda)?;
        let grad = frontend::log_mel_vjp_raw(samples, &back.d_feats)?;
        Ok((back.losses, grad))
    }

    /// Teacher-forced attention-decoder log-probability of target token `t`
    /// (1-based) and its gradient with respect to the features.
    pub(crate) fn token_logprob_backward(
        &self,
        feats: &Array2<f64>,
        target: &Transcript,
        t: usize,
    ) -> Result<(f64, Array2<f64>)> {
        if t == 0 || t > target.len() {
            return Err(Error::Parameter(format!(
                "token index {t} outside 1..={}",
                target.len()
            )));
        }
        let (enc, cache) = encoder::encode_forward(&self.weights.enc, feats);
        let word_syms = self.vocab.word_indices(target)?;
        let mut prev = Vec::with_capacity(word_syms.len() + 1);
        prev.push(self.vocab.sos_sym());
        prev.extend_from_slice(&word_syms);
        let steps = decoder::decoder_forward(&self.weights.dec, &enc, &prev);

        let step = t - 1;
        let y = word_syms[step];
        let logp = steps[step].probs[y].ln();
        // Gradient of +log p: one-hot minus probs at the scoring step only.
        let d_logits: Vec<Array1<f64>> = steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i == step {
                    let mut d = s.probs.mapv(|p| -p);
                    d[y] += 1.0;
                    d
                } else {
                    Array1::zeros(s.probs.len())
                }
            })
            .collect();
        let (_, d_enc) = decoder::decoder_backward(&self.weights.dec, &enc, &steps, &d_logits);
        let (_, d_feats) = encoder::encode_backward(&self.weights.enc, feats, &enc, &cache, &d_enc);
        Ok((logp, d_feats))
    }

    /// Serializes to a versioned JSON weight file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ModelFile { format_version: MODEL_FORMAT_VERSION, params: self.clone() };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Parameter(format!(
                "weight file version {} unsupported (expected {MODEL_FORMAT_VERSION})",
                file.format_version
            )));
        }
        if !(0.0..=1.0).contains(&file.params.lambda) || !file.params.weights.is_finite() {
            return Err(Error::Parameter("weight file fails invariants".into()));
        }
        Ok(file.params)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format_version: u32,
    params: ModelParams,
}
