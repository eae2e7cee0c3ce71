//! Frame encoders: a two-layer temporal convnet and a bidirectional
//! recurrent net, both mapping (T x N_MELS) features to (T x ENC_DIM)
//! encodings, with hand-written backward passes.

use ndarray::{Array1, Array2, Axis};

use super::weights::{ConvWeights, EncoderWeights, RnnWeights};
use super::{CONV_KERNEL, ENC_DIM, RNN_DIM};

/// Intermediate activations kept for the backward pass.
pub enum EncoderCache {
    Conv { u1: Array2<f64>, a1: Array2<f64>, u2: Array2<f64> },
    Rnn { hf: Array2<f64>, hb: Array2<f64> },
}

/// Stacks the kernel-window neighborhood of each frame (zero padding at the
/// edges), so the temporal convolution becomes a single GEMM.
fn unfold(x: &Array2<f64>, kernel: usize) -> Array2<f64> {
    let (t, d) = x.dim();
    let half = kernel / 2;
    let mut out = Array2::zeros((t, kernel * d));
    for f in 0..t {
        for k in 0..kernel {
            let src = f as i64 + k as i64 - half as i64;
            if src >= 0 && (src as usize) < t {
                let src = src as usize;
                for j in 0..d {
                    out[(f, k * d + j)] = x[(src, j)];
                }
            }
        }
    }
    out
}

/// Adjoint of [`unfold`]: scatters window gradients back onto frames.
fn fold_add(d_unfolded: &Array2<f64>, t: usize, d: usize, kernel: usize) -> Array2<f64> {
    let half = kernel / 2;
    let mut out = Array2::zeros((t, d));
    for f in 0..t {
        for k in 0..kernel {
            let src = f as i64 + k as i64 - half as i64;
            if src >= 0 && (src as usize) < t {
                let src = src as usize;
                for j in 0..d {
                    out[(src, j)] += d_unfolded[(f, k * d + j)];
                }
            }
        }
    }
    out
}

fn add_bias(mut z: Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        row += b;
    }
    z
}

fn conv_forward(w: &ConvWeights, feats: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
    let u1 = unfold(feats, CONV_KERNEL);
    let a1 = add_bias(u1.dot(&w.w1), &w.b1).mapv(f64::tanh);
    let u2 = unfold(&a1, CONV_KERNEL);
    let a2 = add_bias(u2.dot(&w.w2), &w.b2).mapv(f64::tanh);
    (a2.clone(), EncoderCache::Conv { u1, a1, u2 })
}

fn rnn_forward(w: &RnnWeights, feats: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
    let t = feats.nrows();
    let mut hf = Array2::zeros((t, RNN_DIM));
    let mut state = Array1::zeros(RNN_DIM);
    for f in 0..t {
        let z = feats.row(f).dot(&w.wx_f) + state.dot(&w.wh_f) + &w.b_f;
        state = z.mapv(f64::tanh);
        hf.row_mut(f).assign(&state);
    }
    let mut hb = Array2::zeros((t, RNN_DIM));
    let mut state = Array1::zeros(RNN_DIM);
    for f in (0..t).rev() {
        let z = feats.row(f).dot(&w.wx_b) + state.dot(&w.wh_b) + &w.b_b;
        state = z.mapv(f64::tanh);
        hb.row_mut(f).assign(&state);
    }
    let mut enc = Array2::zeros((t, ENC_DIM));
    enc.slice_mut(ndarray::s![.., ..RNN_DIM]).assign(&hf);
    enc.slice_mut(ndarray::s![.., RNN_DIM..]).assign(&hb);
    (enc, EncoderCache::Rnn { hf, hb })
}

/// Forward pass; returns (T x ENC_DIM) encodings and the backward cache.
pub fn encode_forward(enc: &EncoderWeights, feats: &Array2<f64>) -> (Array2<f64>, EncoderCache) {
    match enc {
        EncoderWeights::Conv(w) => conv_forward(w, feats),
        EncoderWeights::Rnn(w) => rnn_forward(w, feats),
    }
}

/// Backward pass: gradient of a scalar loss through the encoder.
///
/// Returns the weight gradients and the gradient with respect to the
/// features.
pub fn encode_backward(
    enc: &EncoderWeights,
    feats: &Array2<f64>,
    encoded: &Array2<f64>,
    cache: &EncoderCache,
    d_enc: &Array2<f64>,
) -> (EncoderWeights, Array2<f64>) {
    match (enc, cache) {
        (EncoderWeights::Conv(w), EncoderCache::Conv { u1, a1, u2 }) => {
            let (t, d) = feats.dim();
            let dz2 = d_enc * &encoded.mapv(|a| 1.0 - a * a);
            let dw2 = u2.t().dot(&dz2);
            let db2 = dz2.sum_axis(Axis(0));
            let du2 = dz2.dot(&w.w2.t());
            let da1 = fold_add(&du2, t, ENC_DIM, CONV_KERNEL);
            let dz1 = &da1 * &a1.mapv(|a| 1.0 - a * a);
            let dw1 = u1.t().dot(&dz1);
            let db1 = dz1.sum_axis(Axis(0));
            let du1 = dz1.dot(&w.w1.t());
            let d_feats = fold_add(&du1, t, d, CONV_KERNEL);
            (
                EncoderWeights::Conv(ConvWeights { w1: dw1, b1: db1, w2: dw2, b2: db2 }),
                d_feats,
            )
        }
        (EncoderWeights::Rnn(w), EncoderCache::Rnn { hf, hb }) => {
            let (t, d) = feats.dim();
            let mut d_feats = Array2::zeros((t, d));

            let run = |wx: &Array2<f64>,
                       wh: &Array2<f64>,
                       h: &Array2<f64>,
                       d_h: ndarray::ArrayView2<f64>,
                       forward_dir: bool,
                       d_feats: &mut Array2<f64>| {
                let mut dwx = Array2::zeros(wx.dim());
                let mut dwh = Array2::zeros(wh.dim());
                let mut db = Array1::zeros(RNN_DIM);
                let mut carry: Array1<f64> = Array1::zeros(RNN_DIM);
                let order: Vec<usize> = if forward_dir {
                    (0..t).rev().collect()
                } else {
                    (0..t).collect()
                };
                for &f in &order {
                    let total = &d_h.row(f) + &carry;
                    let dz = &total * &h.row(f).mapv(|a| 1.0 - a * a);
                    // Previous state in traversal order; zero at the chain start.
                    let prev_idx: Option<usize> = if forward_dir {
                        f.checked_sub(1)
                    } else if f + 1 < t {
                        Some(f + 1)
                    } else {
                        None
                    };
                    for (j, &dzj) in dz.iter().enumerate() {
                        db[j] += dzj;
                        for (i, &xi) in feats.row(f).iter().enumerate() {
                            dwx[(i, j)] += xi * dzj;
                        }
                        if let Some(p) = prev_idx {
                            for (i, &hi) in h.row(p).iter().enumerate() {
                                dwh[(i, j)] += hi * dzj;
                            }
                        }
                    }
                    let mut d_x = d_feats.row_mut(f);
                    d_x += &dz.dot(&wx.t());
                    carry = dz.dot(&wh.t());
                }
                (dwx, dwh, db)
            };

            let d_hf = d_enc.slice(ndarray::s![.., ..RNN_DIM]);
            let d_hb = d_enc.slice(ndarray::s![.., RNN_DIM..]);
            let (dwx_f, dwh_f, db_f) = run(&w.wx_f, &w.wh_f, hf, d_hf, true, &mut d_feats);
            let (dwx_b, dwh_b, db_b) = run(&w.wx_b, &w.wh_b, hb, d_hb, false, &mut d_feats);
            (
                EncoderWeights::Rnn(RnnWeights {
                    wx_f: dwx_f,
                    wh_f: dwh_f,
                    b_f: db_f,
                    wx_b: dwx_b,
                    wh_b: dwh_b,
                    b_b: db_b,
                }),
                d_feats,
            )
        }
        _ => panic!("encoder cache does not match architecture"),
    }
}
