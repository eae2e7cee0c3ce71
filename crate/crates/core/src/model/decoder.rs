//! Teacher-forced attention decoder.
//!
//! Each step embeds the previous symbol, forms a query through a tanh
//! projection, attends over the encoder frames with scaled dot-product
//! attention, and projects [query; context] to logits over the V + 2
//! decoder symbols (words, start, end).

use ndarray::{Array1, Array2};

use super::weights::DecoderWeights;
use super::ENC_DIM;

/// Per-step activations kept for the backward pass.
pub struct DecoderStep {
    pub prev_sym: usize,
    pub query: Array1<f64>,
    pub attn: Array1<f64>,
    pub context: Array1<f64>,
    pub probs: Array1<f64>,
}

fn softmax1(scores: &Array1<f64>) -> Array1<f64> {
    let max = scores.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut e = scores.mapv(|v| (v - max).exp());
    let sum = e.sum();
    e.mapv_inplace(|v| v / sum);
    e
}

/// Runs the decoder over `prev_syms` (teacher forcing), returning one step
/// per input symbol.
pub fn decoder_forward(
    dec: &DecoderWeights,
    enc: &Array2<f64>,
    prev_syms: &[usize],
) -> Vec<DecoderStep> {
    let scale = 1.0 / (ENC_DIM as f64).sqrt();
    prev_syms
        .iter()
        .map(|&sym| {
            let e = dec.embed.row(sym);
            let query = (e.dot(&dec.wq) + &dec.bq).mapv(f64::tanh);
            let scores = enc.dot(&query) * scale;
            let attn = softmax1(&scores);
            let context = attn.dot(enc);
            let mut u = Array1::zeros(2 * ENC_DIM);
            u.slice_mut(ndarray::s![..ENC_DIM]).assign(&query);
            u.slice_mut(ndarray::s![ENC_DIM..]).assign(&context);
            let logits = u.dot(&dec.wo) + &dec.bo;
            let probs = softmax1(&logits);
            DecoderStep { prev_sym: sym, query, attn, context, probs }
        })
        .collect()
}

/// Backpropagates per-step logit gradients through the decoder.
///
/// Returns decoder weight gradients and the gradient with respect to the
/// encoder frames.
pub fn decoder_backward(
    dec: &DecoderWeights,
    enc: &Array2<f64>,
    steps: &[DecoderStep],
    d_logits: &[Array1<f64>],
) -> (DecoderWeights, Array2<f64>) {
    assert_eq!(steps.len(), d_logits.len());
    let scale = 1.0 / (ENC_DIM as f64).sqrt();
    let mut g = DecoderWeights {
        embed: Array2::zeros(dec.embed.dim()),
        wq: Array2::zeros(dec.wq.dim()),
        bq: Array1::zeros(dec.bq.dim()),
        wo: Array2::zeros(dec.wo.dim()),
        bo: Array1::zeros(dec.bo.dim()),
    };
    let mut d_enc = Array2::zeros(enc.dim());

    for (step, dl) in steps.iter().zip(d_logits) {
        // logits = [q; c] . wo + bo
        let mut u = Array1::zeros(2 * ENC_DIM);
        u.slice_mut(ndarray::s![..ENC_DIM]).assign(&step.query);
        u.slice_mut(ndarray::s![ENC_DIM..]).assign(&step.context);
        for (i, &ui) in u.iter().enumerate() {
            for (j, &dlj) in dl.iter().enumerate() {
                g.wo[(i, j)] += ui * dlj;
            }
        }
        g.bo += dl;
        let du = dec.wo.dot(dl);
        let mut dq = du.slice(ndarray::s![..ENC_DIM]).to_owned();
        let dc = du.slice(ndarray::s![ENC_DIM..]).to_owned();

        // context = attn . enc
        let d_attn = enc.dot(&dc);
        for (j, &aj) in step.attn.iter().enumerate() {
            let mut row = d_enc.row_mut(j);
            row.scaled_add(aj, &dc);
        }

        // attn = softmax(scores)
        let dot: f64 = step
            .attn
            .iter()
            .zip(d_attn.iter())
            .map(|(a, d)| a * d)
            .sum();
        let d_scores = Array1::from_iter(
            step.attn
                .iter()
                .zip(d_attn.iter())
                .map(|(&a, &d)| a * (d - dot)),
        );

        // scores_j = scale * enc_j . q
        for (j, &dsj) in d_scores.iter().enumerate() {
            let mut row = d_enc.row_mut(j);
            row.scaled_add(dsj * scale, &step.query);
        }
        dq += &(d_scores.dot(enc) * scale);

        // q = tanh(e . wq + bq)
        let dz = &dq * &step.query.mapv(|q| 1.0 - q * q);
        let e = dec.embed.row(step.prev_sym);
        for (i, &ei) in e.iter().enumerate() {
            for (j, &dzj) in dz.iter().enumerate() {
                g.wq[(i, j)] += ei * dzj;
            }
        }
        g.bq += &dz;
        let de = dec.wq.dot(&dz);
        let mut row = g.embed.row_mut(step.prev_sym);
        row += &de;
    }

    (g, d_enc)
}
