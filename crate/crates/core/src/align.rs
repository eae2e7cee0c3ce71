//! Audio location module: CTC forced alignment mapping transcript words to
//! frame spans and sample spans.
//!
//! Alignment runs a Viterbi pass over the blank-interleaved CTC trellis.
//! The path is reconstructed greedily from exact score-to-go values,
//! breaking ties toward advancing early, so each word's first emission
//! lands on the earliest frame among optimal paths.

use ndarray::Array2;

use crate::audio::{SampleSpan, Waveform};
use crate::error::{Error, Result};
use crate::frontend::{FRAME_HOP, FRAME_LEN};
use crate::model::ctc::{extended_labels, log_softmax, min_frames, BLANK};
use crate::model::{ModelParams, Transcript};

/// Frame extent of one transcript token (inclusive start, exclusive end).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenSpan {
    /// 0-based position of the token in the transcript.
    pub token: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Viterbi forced alignment of `targets` (CTC classes in `1..C`) against
/// per-frame logits, producing one span per token.
pub fn forced_align(frame_logits: &Array2<f64>, targets: &[usize]) -> Result<Vec<TokenSpan>> {
    let (t_frames, classes) = frame_logits.dim();
    if t_frames == 0 {
        return Err(Error::Parameter("alignment: zero frames".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y == BLANK || y >= classes) {
        return Err(Error::Parameter(format!(
            "alignment: target class {bad} out of range 1..{classes}"
        )));
    }
    let needed = min_frames(targets);
    if t_frames < needed {
        return Err(Error::InfeasibleAlignment { needed, got: t_frames });
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }

    let lp = log_softmax(frame_logits);
    let ext = extended_labels(targets);
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;

    // Score-to-go: best path score from (t, s) to the end, emission at t
    // included.
    let mut togo = Array2::from_elem((t_frames, s_len), neg);
    togo[(t_frames - 1, s_len - 1)] = lp[(t_frames - 1, ext[s_len - 1])];
    if s_len > 1 {
        togo[(t_frames - 1, s_len - 2)] = lp[(t_frames - 1, ext[s_len - 2])];
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..s_len {
            let mut best = togo[(t + 1, s)];
            if s + 1 < s_len {
                best = best.max(togo[(t + 1, s + 1)]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                best = best.max(togo[(t + 1, s + 2)]);
            }
            togo[(t, s)] = if best == neg { neg } else { best + lp[(t, ext[s])] };
        }
    }

    // Greedy reconstruction from exact score-to-go; ties prefer the larger
    // next state (advance as early as possible).
    let mut state = if s_len > 1 && togo[(0, 1)] >= togo[(0, 0)] { 1 } else { 0 };
    if togo[(0, state)] == neg {
        return Err(Error::InfeasibleAlignment { needed, got: t_frames });
    }
    let mut path = Vec::with_capacity(t_frames);
    path.push(state);
    for t in 1..t_frames {
        let mut next = state;
        let mut best = togo[(t, state)];
        if state + 1 < s_len && togo[(t, state + 1)] >= best {
            next = state + 1;
            best = togo[(t, state + 1)];
        }
        if state + 2 < s_len
            && ext[state + 2] != BLANK
            && ext[state + 2] != ext[state]
            && togo[(t, state + 2)] >= best
        {
            next = state + 2;
        }
        state = next;
        path.push(state);
    }

    // Token k occupies extended state 2k + 1.
    let mut spans = Vec::with_capacity(targets.len());
    for k in 0..targets.len() {
        let s = 2 * k + 1;
        let first = path.iter().position(|&p| p == s);
        let last = path.iter().rposition(|&p| p == s);
        match (first, last) {
            (Some(f), Some(l)) => spans.push(TokenSpan {
                token: k,
                start_frame: f,
                end_frame: l + 1,
            }),
            _ => {
                return Err(Error::Numerical(format!(
                    "alignment path skipped token {k}"
                )))
            }
        }
    }
    Ok(spans)
}

/// Locates the `k`-th word (1-based) of `transcript` in the waveform via
/// the model's CTC head. The sample span covers every sample that fed the
/// word's frames: `[start_frame * hop, end_frame * hop + frame_len)` capped
/// at the waveform length.
pub fn locate_word(
    params: &ModelParams,
    w: &Waveform,
    transcript: &Transcript,
    k: usize,
) -> Result<SampleSpan> {
    if k == 0 || k > transcript.len() {
        return Err(Error::Parameter(format!(
            "word position {k} outside 1..={}",
            transcript.len()
        )));
    }
    let logits = params.ctc_frame_logits(w)?;
    let classes = params.vocab().ctc_classes(transcript)?;
    let spans = forced_align(&logits, &classes)?;
    let span = spans[k - 1];
    frame_span_to_samples(span, w.len())
}

/// Frame-to-sample conversion used by [`locate_word`].
pub fn frame_span_to_samples(span: TokenSpan, waveform_len: usize) -> Result<SampleSpan> {
    let start = span.start_frame * FRAME_HOP;
    let end = (span.end_frame * FRAME_HOP + FRAME_LEN).min(waveform_len);
    SampleSpan::new(start, end)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Best alignment score by enumerating every valid trellis path.
    fn brute_force_best(lp: &Array2<f64>, ext: &[usize]) -> f64 {
        fn rec(lp: &Array2<f64>, ext: &[usize], t: usize, s: usize) -> f64 {
            let t_frames = lp.nrows();
            let here = lp[(t, ext[s])];
            if t == t_frames - 1 {
                return if s + 3 > ext.len() { here } else { f64::NEG_INFINITY };
            }
            let mut best = rec(lp, ext, t + 1, s);
            if s + 1 < ext.len() {
                best = best.max(rec(lp, ext, t + 1, s + 1));
            }
            if s + 2 < ext.len() && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                best = best.max(rec(lp, ext, t + 1, s + 2));
            }
            here + best
        }
        let a = rec(lp, ext, 0, 0);
        let b = if ext.len() > 1 {
            rec(lp, ext, 0, 1)
        } else {
            f64::NEG_INFINITY
        };
        a.max(b)
    }

    fn path_score(lp: &Array2<f64>, ext: &[usize], spans: &[TokenSpan]) -> f64 {
        // Rebuild the state path implied by spans and score it.
        let t_frames = lp.nrows();
        let mut score = 0.0;
        for t in 0..t_frames {
            let mut state = None;
            for sp in spans {
                if t >= sp.start_frame && t < sp.end_frame {
                    state = Some(2 * sp.token + 1);
                }
            }
            let class = state.map(|s| ext[s]).unwrap_or(BLANK);
            score += lp[(t, class)];
        }
        score
    }

    #[test]
    fn one_word_block_of_argmax_frames() {
        // Word class 1 dominates frames 3..7; blank elsewhere.
        let mut logits = Array2::from_elem((10, 3), 0.0);
        for t in 0..10 {
            if (3..7).contains(&t) {
                logits[(t, 1)] = 5.0;
            } else {
                logits[(t, 0)] = 5.0;
            }
        }
        let spans = forced_align(&logits, &[1]).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].start_frame, 3);
        assert_eq!(spans[0].end_frame, 7);
    }

    #[test]
    fn uniform_logits_tie_break_earliest() {
        let logits = Array2::zeros((3, 3));
        let spans = forced_align(&logits, &[1]).unwrap();
        assert_eq!(spans[0].start_frame, 0);
    }

    #[test]
    fn spans_partition_in_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let t = rng.random_range(6..14);
            let logits = Array2::from_shape_fn((t, 4), |_| rng.random_range(-2.0..2.0));
            let targets = vec![
                rng.random_range(1..4),
                rng.random_range(1..4),
                rng.random_range(1..4),
            ];
            if min_frames(&targets) > t {
                continue;
            }
            let spans = forced_align(&logits, &targets).unwrap();
            assert_eq!(spans.len(), 3);
            for w in spans.windows(2) {
                assert!(w[0].end_frame <= w[1].start_frame, "{spans:?}");
                assert!(w[0].start_frame < w[0].end_frame);
            }
        }
    }

    #[test]
    fn viterbi_is_optimal_on_small_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..40 {
            let t = rng.random_range(2..=5);
            let v = rng.random_range(1..=3usize);
            let m = rng.random_range(1..=2usize.min(t));
            let targets: Vec<usize> = (0..m).map(|_| rng.random_range(1..=v)).collect();
            if min_frames(&targets) > t {
                continue;
            }
            let logits = Array2::from_shape_fn((t, v + 1), |_| rng.random_range(-2.0..2.0));
            let lp = log_softmax(&logits);
            let ext = extended_labels(&targets);
            let spans = forced_align(&logits, &targets).unwrap();
            let greedy = path_score(&lp, &ext, &spans);
            let best = brute_force_best(&lp, &ext);
            assert!(
                (greedy - best).abs() < 1e-9,
                "greedy {greedy} vs brute {best} (T={t}, targets={targets:?})"
            );
        }
    }

    #[test]
    fn infeasible_alignment_errors() {
        let logits = Array2::zeros((1, 3));
        assert!(matches!(
            forced_align(&logits, &[1, 2]),
            Err(Error::InfeasibleAlignment { .. })
        ));
    }

    #[test]
    fn frame_to_sample_arithmetic() {
        let span = TokenSpan { token: 0, start_frame: 10, end_frame: 20 };
        let s = frame_span_to_samples(span, 100_000).unwrap();
        assert_eq!(s.start, 1600);
        assert_eq!(s.end, 3600);
        // Capped at the waveform length.
        let s = frame_span_to_samples(span, 3500).unwrap();
        assert_eq!(s.end, 3500);
    }
}
