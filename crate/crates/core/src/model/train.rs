//! SGD training of the joint CTC + attention loss over a clean corpus.
//!
//! Features are extracted once per utterance and cached; only the encoder,
//! heads and decoder are revisited each epoch. Deterministic given the seed.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArchTag, ModelParams, Vocab};
use crate::error::{Error, Result};
use crate::frontend::{self, Features};
use crate::synth::CorpusItem;

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Global-norm gradient clip.
    pub clip_norm: f64,
    /// Joint-loss mixing weight (CTC share).
    pub lambda: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.02,
            momentum: 0.9,
            clip_norm: 5.0,
            lambda: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_joint_loss: f64,
}

/// Trains a fresh model of the given architecture on the corpus.
pub fn train(
    arch: ArchTag,
    vocab: &Vocab,
    corpus: &[CorpusItem],
    cfg: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochStats>)> {
    if corpus.is_empty() {
        return Err(Error::Parameter("empty training corpus".into()));
    }
    let mut params = ModelParams::new_random(arch, vocab.clone(), cfg.lambda, cfg.seed)?;

    let feats: Vec<Features> = corpus
        .iter()
        .map(|item| frontend::log_mel(&item.waveform))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut velocity = params.weights.zeros_like();
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut stats = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for &i in &order {
            let back = params.loss_backward(&feats[i], &corpus[i].transcript, cfg.lambda)?;
            if !back.losses.joint.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch}, item {i}"
                )));
            }
            loss_sum += back.losses.joint;

            let mut grads = back.grads;
            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Training(format!(
                    "gradient diverged at epoch {epoch}, item {i}"
                )));
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            velocity.scale(cfg.momentum);
            velocity.axpy(1.0, &grads);
            params.weights.axpy(-cfg.lr, &velocity);
        }
        stats.push(EpochStats {
            epoch,
            mean_joint_loss: loss_sum / corpus.len() as f64,
        });
    }
    Ok((params, stats))
}
