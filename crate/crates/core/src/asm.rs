//! Score-matching fine-tuning of the surrogate model.
//!
//! The per-token objective combines the squared norm of the input score
//! (the waveform gradient of the decoder's token log-probability) with
//! twice the trace of its Hessian, the trace estimated by Hutchinson
//! probing over central finite differences of the score. Fine-tuning
//! differentiates the same finite-difference estimator with respect to the
//! weights, which only ever needs first-order backward passes.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::frontend;
use crate::model::weights::WeightSet;
use crate::model::{decoder, encoder, ModelParams, Transcript};
use crate::synth::CorpusItem;
use crate::util::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AsmConfig {
    /// Weight of the score-matching term in the total objective.
    pub lambda_asm: f64,
    /// Rademacher probes per example.
    pub n_probes: usize,
    /// Central finite-difference step.
    pub fd_epsilon: f64,
    pub epochs: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for AsmConfig {
    fn default() -> Self {
        Self {
            lambda_asm: 0.01,
            n_probes: 4,
            fd_epsilon: 1e-3,
            epochs: 2,
            lr: 5e-4,
            clip_norm: 5.0,
            seed: 0,
        }
    }
}

impl AsmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_asm < 0.0 {
            return Err(Error::Parameter("lambda_asm must be >= 0".into()));
        }
        if self.n_probes == 0 {
            return Err(Error::Parameter("n_probes must be >= 1".into()));
        }
        if self.fd_epsilon <= 0.0 {
            return Err(Error::Parameter("fd_epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Teacher-forced decoder log-probability of token `t` (1-based) given the
/// true prefix; forward only.
pub fn token_logprob(
    params: &ModelParams,
    samples: &[f64],
    transcript: &Transcript,
    t: usize,
) -> Result<f64> {
    if t == 0 || t > transcript.len() {
        return Err(Error::Parameter(format!(
            "token index {t} outside 1..={}",
            transcript.len()
        )));
    }
    let word_syms = params.vocab().word_indices(transcript)?;
    let feats = frontend::log_mel_raw(samples)?;
    let (enc, _) = encoder::encode_forward(&params.weights.enc, &feats);
    let prev = if t == 1 { params.vocab().sos_sym() } else { word_syms[t - 2] };
    let steps = decoder::decoder_forward(&params.weights.dec, &enc, &[prev]);
    Ok(steps[0].probs[word_syms[t - 1]].ln())
}

/// Gradient of the token log-probability with respect to the waveform
/// samples (the input score).
pub fn token_score(
    params: &ModelParams,
    x: &Waveform,
    transcript: &Transcript,
    t: usize,
) -> Result<Vec<f64>> {
    token_score_raw(params, x.samples(), transcript, t)
}

/// Raw-buffer variant of [`token_score`] used by finite-difference probes.
pub fn token_score_raw(
    params: &ModelParams,
    samples: &[f64],
    transcript: &Transcript,
    t: usize,
) -> Result<Vec<f64>> {
    let feats = frontend::log_mel_raw(samples)?;
    let (_, d_feats) = params.token_logprob_backward(&feats, transcript, t)?;
    frontend::log_mel_vjp_raw(samples, &d_feats)
}

/// A +/-1 probe vector.
pub fn rademacher(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// Hutchinson trace of the Jacobian of an arbitrary score function:
/// mean over probes of nu . [score(x + eps nu) - score(x - eps nu)] / (2 eps).
pub fn hutchinson_trace_of(
    score: impl Fn(&[f64]) -> Result<Vec<f64>>,
    x: &[f64],
    n_probes: usize,
    fd_epsilon: f64,
    seed: u64,
) -> Result<f64> {
    if n_probes == 0 {
        return Err(Error::Parameter("n_probes must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..n_probes {
        let nu = rademacher(x.len(), &mut rng);
        let plus: Vec<f64> = x.iter().zip(&nu).map(|(xi, ni)| xi + fd_epsilon * ni).collect();
        let minus: Vec<f64> = x.iter().zip(&nu).map(|(xi, ni)| xi - fd_epsilon * ni).collect();
        let s_plus = score(&plus)?;
        let s_minus = score(&minus)?;
        let probe: f64 = nu
            .iter()
            .zip(s_plus.iter().zip(&s_minus))
            .map(|(ni, (sp, sm))| ni * (sp - sm) / (2.0 * fd_epsilon))
            .sum();
        acc += probe;
    }
    Ok(acc / n_probes as f64)
}

/// Hutchinson trace of the Hessian of the token log-probability.
pub fn hutchinson_trace(
    params: &ModelParams,
    x: &Waveform,
    transcript: &Transcript,
    t: usize,
    n_probes: usize,
    fd_epsilon: f64,
    seed: u64,
) -> Result<f64> {
    hutchinson_trace_of(
        |samples| token_score_raw(params, samples, transcript, t),
        x.samples(),
        n_probes,
        fd_epsilon,
        seed,
    )
}

/// Per-token score-matching terms: ||score||^2 + 2 * trace.
///
/// Each token draws its probes from a seed derived from (cfg.seed, t), so
/// the terms are order-independent pure functions.
pub fn asm_loss_terms(
    params: &ModelParams,
    x: &Waveform,
    transcript: &Transcript,
    cfg: &AsmConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if transcript.is_empty() {
        return Err(Error::Parameter("asm loss needs a non-empty transcript".into()));
    }
    (1..=transcript.len())
        .map(|t| {
            let score = token_score(params, x, transcript, t)?;
            let norm_sq: f64 = score.iter().map(|s| s * s).sum();
            let trace = hutchinson_trace(
                params,
                x,
                transcript,
                t,
                cfg.n_probes,
                cfg.fd_epsilon,
                derive_seed(cfg.seed, t as u64),
            )?;
            Ok(norm_sq + 2.0 * trace)
        })
        .collect()
}

/// Score-matching loss: the mean of [`asm_loss_terms`] over the transcript.
pub fn asm_loss(
    params: &ModelParams,
    x: &Waveform,
    transcript: &Transcript,
    cfg: &AsmConfig,
) -> Result<f64> {
    let terms = asm_loss_terms(params, x, transcript, cfg)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// One fine-tuning epoch record. `wall_time_s` is informational only and is
/// excluded from reproducibility comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneEpoch {
    pub epoch: usize,
    pub j_asr: f64,
    pub j_asm: f64,
    pub wall_time_s: f64,
}

/// Fine-tune run log: the configuration actually used plus per-epoch stats.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinetuneLog {
    pub config: AsmConfig,
    pub epochs: Vec<FinetuneEpoch>,
}

/// Everything needed to backpropagate token log-probabilities at one
/// evaluation point.
struct PointEval {
    feats: Array2<f64>,
    enc: Array2<f64>,
    cache: encoder::EncoderCache,
    steps: Vec<decoder::DecoderStep>,
    logps: Vec<f64>,
}

fn eval_point(params: &ModelParams, samples: &[f64], word_syms: &[usize]) -> Result<PointEval> {
    let feats = frontend::log_mel_raw(samples)?;
    let (enc, cache) = encoder::encode_forward(&params.weights.enc, &feats);
    let mut prev = Vec::with_capacity(word_syms.len());
    prev.push(params.vocab().sos_sym());
    prev.extend_from_slice(&word_syms[..word_syms.len() - 1]);
    let steps = decoder::decoder_forward(&params.weights.dec, &enc, &prev);
    let logps = steps
        .iter()
        .zip(word_syms)
        .map(|(s, &y)| s.probs[y].ln())
        .collect();
    Ok(PointEval { feats, enc, cache, steps, logps })
}

/// Weight gradient of sum_t coefs[t] * log p(z_t | X) at one evaluation
/// point (the frontend has no weights, so the chain stops at the encoder).
fn point_param_grads(params: &ModelParams, pe: &PointEval, coefs: &[f64], word_syms: &[usize]) -> WeightSet {
    let d_logits: Vec<Array1<f64>> = pe
        .steps
        .iter()
        .zip(word_syms)
        .zip(coefs)
        .map(|((s, &y), &c)| {
            let mut d = s.probs.mapv(|p| -c * p);
            d[y] += c;
            d
        })
        .collect();
    let (dec_grads, d_enc) =
        decoder::decoder_backward(&params.weights.dec, &pe.enc, &pe.steps, &d_logits);
    let (enc_grads, _) =
        encoder::encode_backward(&params.weights.enc, &pe.feats, &pe.enc, &pe.cache, &d_enc);
    let mut grads = params.weights.zeros_like();
    grads.enc = enc_grads;
    grads.dec = dec_grads;
    grads
}

/// Score-matching objective value and weight gradient for one utterance,
/// estimated with per-example Rademacher probes and scalar central
/// differences of the token log-probabilities.
fn asm_training_term(
    params: &ModelParams,
    item: &CorpusItem,
    cfg: &AsmConfig,
    probe_seed: u64,
) -> Result<(f64, WeightSet)> {
    let m = item.transcript.len();
    if m == 0 {
        return Ok((0.0, params.weights.zeros_like()));
    }
    let word_syms = params.vocab().word_indices(&item.transcript)?;
    let x = item.waveform.samples();
    let n = x.len();
    let eps = cfg.fd_epsilon;
    let p_count = cfg.n_probes;

    let mut rng = ChaCha8Rng::seed_from_u64(probe_seed);
    let probes: Vec<Vec<f64>> = (0..p_count).map(|_| rademacher(n, &mut rng)).collect();

    // Evaluation points: clean, then (plus, minus) per probe, in order.
    let mut points: Vec<Vec<f64>> = Vec::with_capacity(1 + 2 * p_count);
    points.push(x.to_vec());
    for nu in &probes {
        points.push(x.iter().zip(nu).map(|(xi, ni)| xi + eps * ni).collect());
        points.push(x.iter().zip(nu).map(|(xi, ni)| xi - eps * ni).collect());
    }
    let evals: Vec<PointEval> = points
        .par_iter()
        .map(|samples| eval_point(params, samples, &word_syms))
        .collect::<Result<_>>()?;

    let f0 = &evals[0].logps;
    let mut value = 0.0;
    let mut grads = params.weights.zeros_like();

    // Clean-point coefficient: every probe's curvature term pulls in
    // -2 f0 / eps^2, twice-weighted by the objective's factor 2.
    let c_zero = vec![-4.0 / (m as f64 * eps * eps); m];
    grads.axpy(1.0, &point_param_grads(params, &evals[0], &c_zero, &word_syms));

    for p in 0..p_count {
        let plus = &evals[1 + 2 * p];
        let minus = &evals[2 + 2 * p];
        let mut c_plus = vec![0.0; m];
        let mut c_minus = vec![0.0; m];
        for t in 0..m {
            let a = (plus.logps[t] - minus.logps[t]) / (2.0 * eps);
            let b = (plus.logps[t] - 2.0 * f0[t] + minus.logps[t]) / (eps * eps);
            value += (a * a + 2.0 * b) / (m as f64 * p_count as f64);
            let w = 1.0 / (m as f64 * p_count as f64);
            c_plus[t] = w * (a / eps + 2.0 / (eps * eps));
            c_minus[t] = w * (-a / eps + 2.0 / (eps * eps));
        }
        grads.axpy(1.0, &point_param_grads(params, plus, &c_plus, &word_syms));
        grads.axpy(1.0, &point_param_grads(params, minus, &c_minus, &word_syms));
    }

    Ok((value, grads))
}

/// Fine-tunes a trained surrogate on `J_ASR + lambda_asm * J_ASM` by plain
/// SGD over the corpus in order; deterministic given the seed.
pub fn finetune_asm(
    start: &ModelParams,
    corpus: &[CorpusItem],
    cfg: &AsmConfig,
) -> Result<(ModelParams, FinetuneLog)> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::Parameter("empty fine-tuning corpus".into()));
    }
    let mut params = start.clone();
    let feats: Vec<frontend::Features> = corpus
        .iter()
        .map(|item| frontend::log_mel(&item.waveform))
        .collect::<Result<_>>()?;

    let mut log = FinetuneLog { config: cfg.clone(), epochs: Vec::with_capacity(cfg.epochs) };
    for epoch in 0..cfg.epochs {
        let t0 = std::time::Instant::now();
        let mut j_asr_sum = 0.0;
        let mut j_asm_sum = 0.0;
        for (idx, item) in corpus.iter().enumerate() {
            let back = params.loss_backward(&feats[idx], &item.transcript, params.lambda())?;
            if !back.losses.joint.is_finite() {
                return Err(Error::Training(format!(
                    "fine-tune diverged at epoch {epoch}, item {idx}"
                )));
            }
            j_asr_sum += back.losses.joint;
            let mut grads = back.grads;

            if cfg.lambda_asm > 0.0 {
                let probe_seed = derive_seed(cfg.seed, (epoch * corpus.len() + idx) as u64);
                let (j_asm, asm_grads) = asm_training_term(&params, item, cfg, probe_seed)?;
                if !j_asm.is_finite() {
                    return Err(Error::Training(format!(
                        "score-matching term diverged at epoch {epoch}, item {idx}"
                    )));
                }
                j_asm_sum += j_asm;
                grads.axpy(cfg.lambda_asm, &asm_grads);
            }

            let norm = grads.global_norm();
            if !norm.is_finite() {
                return Err(Error::Training(format!(
                    "gradient diverged at epoch {epoch}, item {idx}"
                )));
            }
            if norm > cfg.clip_norm {
                grads.scale(cfg.clip_norm / norm);
            }
            params.weights.axpy(-cfg.lr, &grads);
        }
        log.epochs.push(FinetuneEpoch {
            epoch,
            j_asr: j_asr_sum / corpus.len() as f64,
            j_asm: j_asm_sum / corpus.len() as f64,
            wall_time_s: t0.elapsed().as_secs_f64(),
        });
    }
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchTag, ModelParams};
    use crate::synth::{default_vocab, generate_corpus, synthesize_word};

    fn tiny_model() -> ModelParams {
        ModelParams::new_random(ArchTag::ConvNetA, default_vocab(), 0.3, 19).unwrap()
    }

    fn short_item() -> (Waveform, Transcript) {
        let vocab = default_vocab();
        // Two words back to back keeps the waveform short.
        let a = synthesize_word(&vocab, "arc", 1).unwrap();
        let b = synthesize_word(&vocab, "bay", 2).unwrap();
        let mut samples = a.samples().to_vec();
        samples.extend_from_slice(b.samples());
        (Waveform::new(samples).unwrap(), Transcript::parse("arc bay"))
    }

    #[test]
    fn token_score_has_one_component_per_sample() {
        let model = tiny_model();
        let (x, t) = short_item();
        let score = token_score(&model, &x, &t, 1).unwrap();
        assert_eq!(score.len(), x.len());
        assert!(token_score(&model, &x, &t, 0).is_err());
        assert!(token_score(&model, &x, &t, 3).is_err());
    }

    #[test]
    fn token_score_matches_finite_differences() {
        let model = tiny_model();
        let (x, tr) = short_item();
        let score = token_score(&model, &x, &tr, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = 1e-5;
        for _ in 0..20 {
            let i = rng.random_range(0..x.len());
            let mut plus = x.samples().to_vec();
            plus[i] += eps;
            let mut minus = x.samples().to_vec();
            minus[i] -= eps;
            let fp = token_logprob(&model, &plus, &tr, 2).unwrap();
            let fm = token_logprob(&model, &minus, &tr, 2).unwrap();
            let numeric = (fp - fm) / (2.0 * eps);
            let rel = (score[i] - numeric).abs() / (numeric.abs() + 1e-8);
            assert!(rel < 1e-3, "coord {i}: {} vs {numeric}", score[i]);
        }
    }

    /// The score is a gradient field, so mixed partials must agree.
    #[test]
    fn token_score_is_curl_free() {
        let model = tiny_model();
        let (x, tr) = short_item();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let eps = 1e-4;
        for _ in 0..3 {
            let i = rng.random_range(0..x.len());
            let j = rng.random_range(0..x.len());
            if i == j {
                continue;
            }
            let d_si_dxj = {
                let mut plus = x.samples().to_vec();
                plus[j] += eps;
                let mut minus = x.samples().to_vec();
                minus[j] -= eps;
                let sp = token_score_raw(&model, &plus, &tr, 1).unwrap();
                let sm = token_score_raw(&model, &minus, &tr, 1).unwrap();
                (sp[i] - sm[i]) / (2.0 * eps)
            };
            let d_sj_dxi = {
                let mut plus = x.samples().to_vec();
                plus[i] += eps;
                let mut minus = x.samples().to_vec();
                minus[i] -= eps;
                let sp = token_score_raw(&model, &plus, &tr, 1).unwrap();
                let sm = token_score_raw(&model, &minus, &tr, 1).unwrap();
                (sp[j] - sm[j]) / (2.0 * eps)
            };
            assert!(
                (d_si_dxj - d_sj_dxi).abs() < 1e-2,
                "({i},{j}): {d_si_dxj} vs {d_sj_dxi}"
            );
        }
    }

    fn quadratic_score(diag: Vec<f64>) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
        move |x: &[f64]| Ok(x.iter().zip(&diag).map(|(xi, di)| di * xi).collect())
    }

    #[test]
    fn hutchinson_exact_on_diagonal_field() {
        // A = diag(1, 3, 0, ..., 0): trace 4.
        let mut diag = vec![0.0; 10];
        diag[0] = 1.0;
        diag[1] = 3.0;
        let x = vec![0.3; 10];
        let est = hutchinson_trace_of(quadratic_score(diag), &x, 200, 1e-3, 1).unwrap();
        assert!((est - 4.0).abs() / 4.0 < 0.05, "estimate {est}");
    }

    #[test]
    fn single_probe_identity_hessian_is_dimension() {
        let d = 17;
        let diag = vec![1.0; d];
        let x = vec![0.0; d];
        let est = hutchinson_trace_of(quadratic_score(diag), &x, 1, 1e-3, 9).unwrap();
        assert!((est - d as f64).abs() < 1e-9, "estimate {est}");
    }

    #[test]
    fn estimator_mean_over_seeds_is_unbiased() {
        let mut diag = vec![0.0; 10];
        diag[0] = 1.0;
        diag[1] = 3.0;
        let x = vec![0.1; 10];
        let big = hutchinson_trace_of(quadratic_score(diag.clone()), &x, 200, 1e-3, 0).unwrap();
        let mean: f64 = (1..=10u64)
            .map(|s| hutchinson_trace_of(quadratic_score(diag.clone()), &x, 4, 1e-3, s).unwrap())
            .sum::<f64>()
            / 10.0;
        assert!((mean - big).abs() / big.abs() < 0.02, "{mean} vs {big}");
    }

    /// Dense diagonally dominant fields with known traces.
    #[test]
    fn hutchinson_close_on_diagonally_dominant_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for trial in 0..5 {
            let d = rng.random_range(20..=50);
            let mut a = Array2::zeros((d, d));
            for i in 0..d {
                for j in 0..i {
                    let v = rng.random_range(-0.05..0.05);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
                a[(i, i)] = rng.random_range(1.0..2.0);
            }
            let exact: f64 = (0..d).map(|i| a[(i, i)]).sum();
            let a2 = a.clone();
            let score = move |x: &[f64]| -> Result<Vec<f64>> {
                let xv = Array1::from_iter(x.iter().copied());
                Ok(a2.dot(&xv).to_vec())
            };
            let x = vec![0.0; d];
            let est = hutchinson_trace_of(score, &x, 200, 1e-3, 100 + trial).unwrap();
            let rel = (est - exact).abs() / exact.abs();
            assert!(rel < 0.05, "trial {trial}: {est} vs {exact}");
        }
    }

    #[test]
    fn rademacher_outer_product_is_identity_in_expectation() {
        let d = 20;
        let draws = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut acc = Array2::<f64>::zeros((d, d));
        for _ in 0..draws {
            let nu = rademacher(d, &mut rng);
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += nu[i] * nu[j];
                }
            }
        }
        acc.mapv_inplace(|v| v / draws as f64);
        for i in 0..d {
            assert!((acc[(i, i)] - 1.0).abs() < 1e-12);
            for j in 0..d {
                if i != j {
                    assert!(acc[(i, j)].abs() < 0.05, "({i},{j}) = {}", acc[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn asm_loss_single_token_reduces_to_one_term() {
        let model = tiny_model();
        let vocab = default_vocab();
        let x = synthesize_word(&vocab, "fog", 4).unwrap();
        let tr = Transcript::parse("fog");
        let cfg = AsmConfig { n_probes: 2, ..AsmConfig::default() };
        let terms = asm_loss_terms(&model, &x, &tr, &cfg).unwrap();
        assert_eq!(terms.len(), 1);
        let loss = asm_loss(&model, &x, &tr, &cfg).unwrap();
        assert_eq!(loss, terms[0]);
    }

    /// Per-token terms are pure functions of (seed, t): evaluating them in
    /// reverse order and summing canonically reproduces the loss exactly.
    #[test]
    fn asm_loss_is_token_order_invariant() {
        let model = tiny_model();
        let (x, tr) = short_item();
        let cfg = AsmConfig { n_probes: 2, ..AsmConfig::default() };
        let loss = asm_loss(&model, &x, &tr, &cfg).unwrap();
        let mut reversed: Vec<f64> = (1..=tr.len())
            .rev()
            .map(|t| {
                let score = token_score(&model, &x, &tr, t).unwrap();
                let norm_sq: f64 = score.iter().map(|s| s * s).sum();
                let trace = hutchinson_trace(
                    &model,
                    &x,
                    &tr,
                    t,
                    cfg.n_probes,
                    cfg.fd_epsilon,
                    derive_seed(cfg.seed, t as u64),
                )
                .unwrap();
                norm_sq + 2.0 * trace
            })
            .collect();
        reversed.reverse();
        let recomputed = reversed.iter().sum::<f64>() / reversed.len() as f64;
        assert_eq!(loss, recomputed);
    }

    #[test]
    fn asm_loss_finite_on_generated_items() {
        let model = tiny_model();
        let vocab = default_vocab();
        let corpus = generate_corpus(3, 3, 4, &vocab, 3).unwrap();
        let cfg = AsmConfig { n_probes: 1, ..AsmConfig::default() };
        for item in &corpus {
            let loss = asm_loss(&model, &item.waveform, &item.transcript, &cfg).unwrap();
            assert!(loss.is_finite());
        }
    }

    /// With lambda_asm = 0 the trajectory is exactly plain SGD on the ASR
    /// loss.
    #[test]
    fn finetune_with_zero_lambda_matches_plain_sgd() {
        let vocab = default_vocab();
        let corpus = generate_corpus(4, 3, 4, &vocab, 8).unwrap();
        let start = tiny_model();
        let cfg = AsmConfig { lambda_asm: 0.0, epochs: 2, ..AsmConfig::default() };
        let (tuned, log) = finetune_asm(&start, &corpus, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 2);

        let mut plain = start.clone();
        for _ in 0..cfg.epochs {
            for item in &corpus {
                let feats = frontend::log_mel(&item.waveform).unwrap();
                let back = plain
                    .loss_backward(&feats, &item.transcript, plain.lambda())
                    .unwrap();
                let mut grads = back.grads;
                let norm = grads.global_norm();
                if norm > cfg.clip_norm {
                    grads.scale(cfg.clip_norm / norm);
                }
                plain.weights.axpy(-cfg.lr, &grads);
            }
        }
        assert_eq!(
            serde_json::to_string(&tuned).unwrap(),
            serde_json::to_string(&plain).unwrap()
        );
    }

    #[test]
    fn default_lambda_recorded_in_log() {
        let cfg = AsmConfig::default();
        assert_eq!(cfg.lambda_asm, 0.01);
        let json = serde_json::to_string(&FinetuneLog { config: cfg, epochs: vec![] }).unwrap();
        assert!(json.contains("\"lambda_asm\":0.01"));
    }

    #[test]
    fn doubling_probes_stays_within_probe_variance() {
        let model = tiny_model();
        let vocab = default_vocab();
        let x = synthesize_word(&vocab, "gum", 9).unwrap();
        let tr = Transcript::parse("gum");

        // Per-seed spread of the 2-probe trace estimator.
        let traces: Vec<f64> = (0..10u64)
            .map(|s| hutchinson_trace(&model, &x, &tr, 1, 2, 1e-3, s).unwrap())
            .collect();
        let mean = traces.iter().sum::<f64>() / traces.len() as f64;
        let std = (traces.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
            / (traces.len() - 1) as f64)
            .sqrt();

        let cfg2 = AsmConfig { n_probes: 2, ..AsmConfig::default() };
        let cfg4 = AsmConfig { n_probes: 4, ..AsmConfig::default() };
        let l2 = asm_loss(&model, &x, &tr, &cfg2).unwrap();
        let l4 = asm_loss(&model, &x, &tr, &cfg4).unwrap();
        // The loss difference comes only from the trace estimate (factor 2).
        assert!(
            (l4 - l2).abs() <= 2.0 * 5.0 * std.max(1e-12),
            "delta {} vs probe std {std}",
            (l4 - l2).abs()
        );
    }
}
