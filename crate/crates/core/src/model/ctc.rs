//! CTC loss by forward-backward recursion in log space, with an analytic
//! gradient with respect to the frame logits.

use ndarray::Array2;

use crate::error::{Error, Result};

pub const BLANK: usize = 0;

/// log(exp(a) + exp(b)) that tolerates -inf.
fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Row-wise log-softmax with max-shift stabilization.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Blank-interleaved extended label sequence: [blank, y1, blank, ..., yM, blank].
pub fn extended_labels(targets: &[usize]) -> Vec<usize> {
    let mut ext = Vec::with_capacity(2 * targets.len() + 1);
    ext.push(BLANK);
    for &y in targets {
        ext.push(y);
        ext.push(BLANK);
    }
    ext
}

/// Frames needed to emit `targets`: one per label plus one separator per
/// adjacent repeat.
pub fn min_frames(targets: &[usize]) -> usize {
    let repeats = targets.windows(2).filter(|w| w[0] == w[1]).count();
    targets.len() + repeats
}

/// Negative log marginal likelihood of `targets` under per-frame `logits`
/// (shape T x C, blank at class 0), and its gradient with respect to the
/// logits.
///
/// Targets are class indices in `1..C`. Errors when the target cannot be
/// aligned within T frames.
pub fn ctc_loss(logits: &Array2<f64>, targets: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (t_frames, classes) = logits.dim();
    if t_frames == 0 {
        return Err(Error::Parameter("ctc: zero frames".into()));
    }
    if let Some(&bad) = targets.iter().find(|&&y| y == BLANK || y >= classes) {
        return Err(Error::Parameter(format!(
            "ctc: target class {bad} out of range 1..{classes}"
        )));
    }
    let needed = min_frames(targets);
    if t_frames < needed {
        return Err(Error::InfeasibleAlignment {
            needed,
            got: t_frames,
        });
    }

    let lp = log_softmax(logits);
    let ext = extended_labels(targets);
    let s_len = ext.len();
    let neg = f64::NEG_INFINITY;

    // Forward variables, emissions included at each step.
    let mut alpha = Array2::from_elem((t_frames, s_len), neg);
    alpha[(0, 0)] = lp[(0, ext[0])];
    if s_len > 1 {
        alpha[(0, 1)] = lp[(0, ext[1])];
    }
    for t in 1..t_frames {
        for s in 0..s_len {
            let mut acc = alpha[(t - 1, s)];
            if s >= 1 {
                acc = log_add(acc, alpha[(t - 1, s - 1)]);
            }
            if s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2] {
                acc = log_add(acc, alpha[(t - 1, s - 2)]);
            }
            alpha[(t, s)] = if acc == neg { neg } else { acc + lp[(t, ext[s])] };
        }
    }

    let mut log_p = alpha[(t_frames - 1, s_len - 1)];
    if s_len > 1 {
        log_p = log_add(log_p, alpha[(t_frames - 1, s_len - 2)]);
    }
    if log_p == neg {
        return Err(Error::Numerical("ctc: zero-probability target".into()));
    }

    // Backward variables, emissions included.
    let mut beta = Array2::from_elem((t_frames, s_len), neg);
    beta[(t_frames - 1, s_len - 1)] = lp[(t_frames - 1, ext[s_len - 1])];
    if s_len > 1 {
        beta[(t_frames - 1, s_len - 2)] = lp[(t_frames - 1, ext[s_len - 2])];
    }
    for t in (0..t_frames - 1).rev() {
        for s in 0..s_len {
            let mut acc = beta[(t + 1, s)];
            if s + 1 < s_len {
                acc = log_add(acc, beta[(t + 1, s + 1)]);
            }
            if s + 2 < s_len && ext[s + 2] != BLANK && ext[s + 2] != ext[s] {
                acc = log_add(acc, beta[(t + 1, s + 2)]);
            }
            beta[(t, s)] = if acc == neg { neg } else { acc + lp[(t, ext[s])] };
        }
    }

    // dL/dlogit[t][c] = p(c|t) - exp(lse_{s: ext_s = c}(alpha + beta) - logP - lp[t][c])
    let mut grad = Array2::zeros((t_frames, classes));
    for t in 0..t_frames {
        let mut lse_by_class = vec![neg; classes];
        for s in 0..s_len {
            let ab = alpha[(t, s)] + beta[(t, s)];
            if ab != neg {
                lse_by_class[ext[s]] = log_add(lse_by_class[ext[s]], ab);
            }
        }
        for c in 0..classes {
            let posterior = if lse_by_class[c] == neg {
                0.0
            } else {
                (lse_by_class[c] - log_p - lp[(t, c)]).exp()
            };
            grad[(t, c)] = lp[(t, c)].exp() - posterior;
        }
    }

    Ok((-log_p, grad))
}
