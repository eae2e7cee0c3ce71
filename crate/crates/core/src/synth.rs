//! Deterministic parametric word synthesizer and corpus generator.
//!
//! Each vocabulary word gets a fixed two-formant sinusoid pair whose
//! frequencies are derived from the token id by multiplicative hashing, a
//! Hann amplitude envelope, and a little seeded noise. The same engine
//! produces corpus utterances (with ground-truth word spans for alignment
//! validation) and the high-passed target clips used to initialize insert
//! and substitute attacks.

use std::io::Write as _;
use std::path::Path;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{self, SampleSpan, Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::model::{Transcript, Vocab};
use crate::util::{derive_seed, fnv1a};

/// Fixed seed for attack target clips, so `synthesize_target` is a pure
/// function of the word alone.
pub const TARGET_CLIP_SEED: u64 = 0x7A36_51C2;

/// Word gaps inside an utterance, in milliseconds.
const GAP_MS: (u64, u64) = (40, 80);
/// Silence margins at utterance edges, in milliseconds.
const MARGIN_MS: (u64, u64) = (60, 100);
/// Tone-pair peak amplitude; leaves headroom for perturbations.
const TONE_AMP: f64 = 0.35;
/// Additive noise level relative to the tone-pair peak: -30 dB.
const NOISE_REL: f64 = 0.031622776601683794;

/// One synthetic utterance with generator ground truth.
#[derive(Debug, Clone)]
pub struct CorpusItem {
    pub waveform: Waveform,
    pub transcript: Transcript,
    /// Exact sample extent of each word, in transcript order.
    pub true_spans: Vec<SampleSpan>,
}

/// Word-specific formant pair, hashed from the token id (blank = 0,
/// words = 1..) with the R2 low-discrepancy multipliers so small
/// vocabularies stay well separated in frequency.
fn formants(token_id: usize) -> (f64, f64) {
    const A1: f64 = 0.754_877_666_246_692_7;
    const A2: f64 = 0.569_840_290_998_053_2;
    let k = token_id as f64;
    let f1 = 300.0 + (k * A1).fract() * 1_100.0;
    let f2 = 1_600.0 + (k * A2).fract() * 1_400.0;
    (f1, f2)
}

/// Synthesizes one 120-200 ms word clip; deterministic given (word, seed).
pub fn synthesize_word(vocab: &Vocab, word: &str, seed: u64) -> Result<Waveform> {
    let idx = vocab
        .word_index(word)
        .ok_or_else(|| Error::Parameter(format!("unknown word {word:?}")))?;
    let token_id = idx + 1;
    let h = fnv1a(word.as_bytes());
    let (f1, f2) = formants(token_id);
    let dur_ms = 120 + (h % 81) as usize; // 120..=200
    let len = dur_ms * SAMPLE_RATE as usize / 1000;
    let phase1 = (h >> 8) as f64 / u64::MAX as f64 * std::f64::consts::TAU;
    let phase2 = (h >> 24) as f64 / u64::MAX as f64 * std::f64::consts::TAU;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, h));
    let w1 = std::f64::consts::TAU * f1 / SAMPLE_RATE as f64;
    let w2 = std::f64::consts::TAU * f2 / SAMPLE_RATE as f64;
    // The noise pedestal spans the whole clip (short edge ramps keep
    // filtering clean); it marks the word extent crisply for alignment
    // while the Hann envelope shapes the tones.
    let noise_ramp = 40.min(len / 2);
    let samples = (0..len)
        .map(|n| {
            let env = 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / (len - 1) as f64).cos());
            let tone = TONE_AMP * (w1 * n as f64 + phase1).sin()
                + TONE_AMP * (w2 * n as f64 + phase2).sin();
            let edge = n.min(len - 1 - n);
            let ramp = if edge < noise_ramp {
                0.5 * (1.0 - (std::f64::consts::PI * edge as f64 / noise_ramp as f64).cos())
            } else {
                1.0
            };
            let noise = 2.0 * TONE_AMP * NOISE_REL * rng.random_range(-1.0..1.0);
            env * tone + ramp * noise
        })
        .collect();
    Waveform::new(samples)
}

/// Target-word audio for insert/substitute attacks: the fixed-seed word
/// clip pushed through the 7 kHz high-pass.
pub fn synthesize_target(vocab: &Vocab, word: &str) -> Result<Waveform> {
    Ok(audio::highpass_7k(&synthesize_word(vocab, word, TARGET_CLIP_SEED)?))
}

/// Generates `n_utterances` items of `words_min..=words_max` distinct words
/// joined by 40-80 ms silence gaps, with ground-truth spans recorded.
pub fn generate_corpus(
    n_utterances: usize,
    words_min: usize,
    words_max: usize,
    vocab: &Vocab,
    seed: u64,
) -> Result<Vec<CorpusItem>> {
    if vocab.n_words() < 4 {
        return Err(Error::Parameter("corpus vocabulary needs >= 4 words".into()));
    }
    if words_min < 1 || words_min > words_max || words_max > vocab.n_words() {
        return Err(Error::Parameter(format!(
            "invalid words-per-utterance range {words_min}..={words_max} for {} words",
            vocab.n_words()
        )));
    }
    let ms = |v: u64| (v * SAMPLE_RATE as u64 / 1000) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(n_utterances);
    for _ in 0..n_utterances {
        let m = rng.random_range(words_min..=words_max);
        // Distinct words per utterance keep the attack-success predicates
        // unambiguous.
        let mut idx: Vec<usize> = (0..vocab.n_words()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(m);
        let words: Vec<String> = idx.iter().map(|&i| vocab.words()[i].clone()).collect();

        let mut samples = vec![0.0; ms(rng.random_range(MARGIN_MS.0..=MARGIN_MS.1))];
        let mut spans = Vec::with_capacity(m);
        for (pos, word) in words.iter().enumerate() {
            if pos > 0 {
                samples.extend(std::iter::repeat(0.0).take(ms(rng.random_range(GAP_MS.0..=GAP_MS.1))));
            }
            let word_seed = rng.random::<u64>();
            let clip = synthesize_word(vocab, word, word_seed)?;
            let start = samples.len();
            samples.extend_from_slice(clip.samples());
            spans.push(SampleSpan::new(start, samples.len())?);
        }
        samples.extend(std::iter::repeat(0.0).take(ms(rng.random_range(MARGIN_MS.0..=MARGIN_MS.1))));

        items.push(CorpusItem {
            waveform: Waveform::new(samples)?,
            transcript: Transcript::new(words),
            true_spans: spans,
        });
    }
    Ok(items)
}

/// One manifest line: `{audio_path, transcript, spans}`.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    audio_path: String,
    transcript: String,
    spans: Vec<[usize; 2]>,
}

/// Writes WAV files plus `manifest.jsonl` into `dir`.
pub fn save_corpus(items: &[CorpusItem], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = std::fs::File::create(dir.join("manifest.jsonl"))?;
    for (i, item) in items.iter().enumerate() {
        let name = format!("utt_{i:04}.wav");
        audio::wav_write(&item.waveform, &dir.join(&name))?;
        let entry = ManifestEntry {
            audio_path: name,
            transcript: item.transcript.to_string(),
            spans: item.true_spans.iter().map(|s| [s.start, s.end]).collect(),
        };
        writeln!(manifest, "{}", serde_json::to_string(&entry)?)?;
    }
    Ok(())
}

/// Loads a corpus written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusItem>> {
    let text = std::fs::read_to_string(dir.join("manifest.jsonl"))?;
    let mut items = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let entry: ManifestEntry = serde_json::from_str(line)?;
        let waveform = audio::wav_read(&dir.join(&entry.audio_path))?;
        let true_spans = entry
            .spans
            .iter()
            .map(|&[s, e]| SampleSpan::new(s, e))
            .collect::<Result<_>>()?;
        items.push(CorpusItem {
            waveform,
            transcript: Transcript::parse(&entry.transcript),
            true_spans,
        });
    }
    Ok(items)
}

/// Default 12-word vocabulary used by the CLI and the test corpus.
pub fn default_vocab() -> Vocab {
    Vocab::new(
        ["arc", "bay", "cod", "dew", "elm", "fog", "gum", "hay", "ivy", "jet", "kit", "oak"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
    )
    .expect("default vocabulary is valid")
}
