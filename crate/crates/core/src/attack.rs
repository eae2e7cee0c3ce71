//! Target-label construction, local initialization, the momentum iterative
//! sign-gradient optimizer, global assembly, and the full two-stage attack.
//!
//! The attack is a pure function of (model, audio, transcript, spec,
//! config, seed): stage 1 locates the attacked word, builds a local
//! fragment, and optimizes it toward the local target; stage 2 splices the
//! fragment back with tapered seams and optimizes the whole utterance
//! toward the edited transcript inside an l-inf ball around the assembled
//! initialization.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::locate_word;
use crate::audio::{concat_fragments, project, SampleSpan, Waveform};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Transcript};
use crate::synth::synthesize_target;

/// The three contextualized edit behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackType {
    Delete,
    Insert,
    Substitute,
}

impl std::fmt::Display for AttackType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttackType::Delete => write!(f, "delete"),
            AttackType::Insert => write!(f, "insert"),
            AttackType::Substitute => write!(f, "substitute"),
        }
    }
}

impl std::str::FromStr for AttackType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "delete" => Ok(AttackType::Delete),
            "insert" => Ok(AttackType::Insert),
            "substitute" => Ok(AttackType::Substitute),
            other => Err(Error::Parameter(format!("unknown attack type {other:?}"))),
        }
    }
}

/// What to edit: attack type, 1-based word position `k`, and the target
/// word for insert/substitute. Insert places the target after word `k`
/// (`k = 0` prepends).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub attack_type: AttackType,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_word: Option<String>,
}

impl AttackSpec {
    pub fn delete(k: usize) -> Self {
        Self { attack_type: AttackType::Delete, k, target_word: None }
    }

    pub fn insert(k: usize, target: &str) -> Self {
        Self { attack_type: AttackType::Insert, k, target_word: Some(target.to_string()) }
    }

    pub fn substitute(k: usize, target: &str) -> Self {
        Self { attack_type: AttackType::Substitute, k, target_word: Some(target.to_string()) }
    }

    /// Checks the spec against the ground-truth transcript and vocabulary.
    pub fn validate(&self, y: &Transcript, vocab: &crate::model::Vocab) -> Result<()> {
        let m = y.len();
        match self.attack_type {
            AttackType::Delete => {
                if self.k == 0 || self.k > m {
                    return Err(Error::Parameter(format!("delete position {} outside 1..={m}", self.k)));
                }
                if self.target_word.is_some() {
                    return Err(Error::Parameter("delete takes no target word".into()));
                }
            }
            AttackType::Insert => {
                if self.k > m {
                    return Err(Error::Parameter(format!("insert position {} outside 0..={m}", self.k)));
                }
            }
            AttackType::Substitute => {
                if self.k == 0 || self.k > m {
                    return Err(Error::Parameter(format!(
                        "substitute position {} outside 1..={m}",
                        self.k
                    )));
                }
            }
        }
        if matches!(self.attack_type, AttackType::Insert | AttackType::Substitute) {
            let w = self
                .target_word
                .as_deref()
                .ok_or_else(|| Error::Parameter("insert/substitute need a target word".into()))?;
            if !vocab.contains(w) {
                return Err(Error::Parameter(format!("target word {w:?} not in vocabulary")));
            }
        }
        Ok(())
    }
}

/// Optimizer and budget knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// l-inf perturbation budget.
    pub delta: f64,
    /// Total iterations, split evenly across the two stages.
    pub iters: usize,
    /// Momentum decay.
    pub mu: f64,
    /// Step size. The default 2 * delta / (iters / 2) can traverse the
    /// budget within one stage.
    pub alpha: f64,
    /// Joint-loss mixing weight used during the attack.
    pub lambda: f64,
    /// Seam taper length in samples.
    pub ramp_len: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { delta: 0.06, iters: 50, mu: 0.5, alpha: 0.0048, lambda: 0.3, ramp_len: 160 }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta <= 0.0 {
            return Err(Error::Parameter("delta must be positive".into()));
        }
        if self.iters < 2 || self.iters % 2 != 0 {
            return Err(Error::Parameter("iters must be even and >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Parameter("mu must be in [0, 1)".into()));
        }
        if self.alpha <= 0.0 {
            return Err(Error::Parameter("alpha must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Parameter("lambda must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Attack procedure variants used for baseline comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodVariant {
    /// The full local-to-global attack with synthesized target clips.
    TwoStage,
    /// Synthesized-clip initialization replaced by seeded noise.
    NoiseInit,
    /// No local stage; all iterations spent on the assembled audio.
    GlobalOnly,
}

impl std::fmt::Display for MethodVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodVariant::TwoStage => write!(f, "two-stage"),
            MethodVariant::NoiseInit => write!(f, "noise-init"),
            MethodVariant::GlobalOnly => write!(f, "global-only"),
        }
    }
}

/// Adversarial waveform plus per-stage traces.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: Waveform,
    /// The optimized local fragment spliced in by stage 2.
    pub local_fragment: Waveform,
    /// For delete/substitute: the located word span in the input audio.
    /// For insert: the span the fragment occupies in the output audio.
    pub span_used: SampleSpan,
    pub target_transcript: Transcript,
    pub stage1_losses: Vec<f64>,
    pub stage2_losses: Vec<f64>,
}

/// Edits the ground-truth transcript at position `k` per the attack type.
pub fn build_target_transcript(y: &Transcript, spec: &AttackSpec) -> Result<Transcript> {
    let m = y.len();
    let words = y.words();
    let out = match spec.attack_type {
        AttackType::Delete => {
            if spec.k == 0 || spec.k > m {
                return Err(Error::Parameter(format!("delete position {}", spec.k)));
            }
            let mut w = words.to_vec();
            w.remove(spec.k - 1);
            w
        }
        AttackType::Insert => {
            if spec.k > m {
                return Err(Error::Parameter(format!("insert position {}", spec.k)));
            }
            let target = spec
                .target_word
                .clone()
                .ok_or_else(|| Error::Parameter("insert needs a target word".into()))?;
            let mut w = words.to_vec();
            w.insert(spec.k, target);
            w
        }
        AttackType::Substitute => {
            if spec.k == 0 || spec.k > m {
                return Err(Error::Parameter(format!("substitute position {}", spec.k)));
            }
            let target = spec
                .target_word
                .clone()
                .ok_or_else(|| Error::Parameter("substitute needs a target word".into()))?;
            let mut w = words.to_vec();
            w[spec.k - 1] = target;
            w
        }
    };
    Ok(Transcript::new(out))
}

/// Builds the stage-1 fragment.
///
/// * delete: the original audio span, untouched;
/// * insert: the target clip amplitude-clipped to the peak of `x`;
/// * substitute: the elementwise mean of the original span and the target
///   clip (truncated / zero-padded to the span length).
pub fn init_local(
    x: &Waveform,
    span: SampleSpan,
    spec: &AttackSpec,
    target_clip: Option<&Waveform>,
) -> Result<Waveform> {
    match spec.attack_type {
        AttackType::Delete => x.slice(span),
        AttackType::Insert => {
            let clip = target_clip
                .ok_or_else(|| Error::Parameter("insert needs a target clip".into()))?;
            let peak = x.peak();
            Waveform::new(clip.samples().iter().map(|s| s.clamp(-peak, peak)).collect())
        }
        AttackType::Substitute => {
            let clip = target_clip
                .ok_or_else(|| Error::Parameter("substitute needs a target clip".into()))?;
            let original = x.slice(span)?;
            let samples = original
                .samples()
                .iter()
                .enumerate()
                .map(|(i, &o)| {
                    let c = clip.samples().get(i).copied().unwrap_or(0.0);
                    0.5 * (o + c)
                })
                .collect();
            Waveform::new(samples)
        }
    }
}

/// Momentum iterative sign-gradient descent toward `target` inside an
/// l-inf ball of radius `config.delta` around `init`.
///
/// Returns the final iterate and the per-iteration joint losses (evaluated
/// at each pre-step iterate).
pub fn mifgsm(
    model: &ModelParams,
    init: &Waveform,
    target: &Transcript,
    iters: usize,
    config: &AttackConfig,
) -> Result<(Waveform, Vec<f64>)> {
    if iters == 0 {
        return Err(Error::Parameter("mifgsm needs at least one iteration".into()));
    }
    let mut x = init.clone();
    let mut g = vec![0.0; init.len()];
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        let (losses, grad) = model.joint_loss_with_lambda(&x, target, config.lambda)?;
        if grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("mifgsm: non-finite gradient".into()));
        }
        trace.push(losses.joint);
        let l1: f64 = grad.iter().map(|v| v.abs()).sum();
        if l1 > 0.0 {
            for (gi, di) in g.iter_mut().zip(&grad) {
                *gi = config.mu * *gi + di / l1;
            }
        } else {
            for gi in g.iter_mut() {
                *gi *= config.mu;
            }
        }
        let stepped: Vec<f64> = x
            .samples()
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| xi - config.alpha * sign(gi))
            .collect();
        x = project(&Waveform::new(stepped)?, init, config.delta)?;
    }
    Ok((x, trace))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Splices the local fragment into the original audio with tapered seams.
///
/// Delete/substitute replace `[span.start, span.end)`; insert splits the
/// audio at `span.start` and puts the fragment in between.
pub fn assemble_global(
    x: &Waveform,
    local: &Waveform,
    span: SampleSpan,
    attack_type: AttackType,
    ramp_len: usize,
) -> Result<Waveform> {
    match attack_type {
        AttackType::Delete | AttackType::Substitute => {
            span.validate(x.len())?;
            let head = x.slice_range(0, span.start)?;
            let tail = x.slice_range(span.end, x.len())?;
            concat_fragments(&[head, local.clone(), tail], ramp_len)
        }
        AttackType::Insert => {
            if span.start > x.len() {
                return Err(Error::Parameter(format!(
                    "insert point {} beyond waveform of {} samples",
                    span.start,
                    x.len()
                )));
            }
            let head = x.slice_range(0, span.start)?;
            let tail = x.slice_range(span.start, x.len())?;
            concat_fragments(&[head, local.clone(), tail], ramp_len)
        }
    }
}

/// Runs the full two-stage attack with the standard (synthesized-clip)
/// initialization.
pub fn attack(
    surrogate: &ModelParams,
    x: &Waveform,
    y: &Transcript,
    spec: &AttackSpec,
    config: &AttackConfig,
) -> Result<AttackResult> {
    attack_variant(surrogate, x, y, spec, config, MethodVariant::TwoStage, 0)
}

/// Fragment length used for noise-init insertions (160 ms).
const NOISE_INSERT_LEN: usize = 2_560;

/// Variant-aware attack entry point. `seed` only feeds the noise-init
/// fragment; the other variants are seed-independent.
pub fn attack_variant(
    surrogate: &ModelParams,
    x: &Waveform,
    y: &Transcript,
    spec: &AttackSpec,
    config: &AttackConfig,
    variant: MethodVariant,
    seed: u64,
) -> Result<AttackResult> {
    config.validate()?;
    spec.validate(y, surrogate.vocab())?;
    let target_transcript = build_target_transcript(y, spec)?;

    // Locate the attacked word. Insertion goes after word k, so the
    // insertion point is the end of k's span (start of audio for k = 0).
    let (span, insert_at) = match spec.attack_type {
        AttackType::Insert => {
            let at = if spec.k == 0 {
                0
            } else {
                locate_word(surrogate, x, y, spec.k)?.end.min(x.len())
            };
            (None, Some(at))
        }
        _ => (Some(locate_word(surrogate, x, y, spec.k)?), None),
    };

    // Stage-1 initialization.
    let init = match (variant, spec.attack_type) {
        (_, AttackType::Delete) => init_local(x, span.unwrap(), spec, None)?,
        (MethodVariant::NoiseInit, _) => {
            let len = match spec.attack_type {
                AttackType::Substitute => span.unwrap().len(),
                _ => NOISE_INSERT_LEN,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let amp = x.peak().min(0.05);
            Waveform::new((0..len).map(|_| rng.random_range(-amp..=amp)).collect())?
        }
        (_, _) => {
            let word = spec.target_word.as_deref().expect("validated above");
            let clip = synthesize_target(surrogate.vocab(), word)?;
            let init_span = span.unwrap_or_else(|| {
                let at = insert_at.unwrap();
                SampleSpan { start: at, end: at + clip.len() }
            });
            init_local(x, init_span, spec, Some(&clip))?
        }
    };

    // Stage-1 local target: the inserted/substituted word alone; for
    // deletion the fragment is pushed toward transcribing to nothing.
    let stage1_target = match spec.attack_type {
        AttackType::Delete => Transcript::empty(),
        _ => Transcript::new(vec![spec.target_word.clone().expect("validated above")]),
    };

    let half = config.iters / 2;
    let (local, stage1_losses, stage2_iters) = match variant {
        MethodVariant::GlobalOnly => (init, Vec::new(), config.iters),
        _ => {
            let (local, trace) = mifgsm(surrogate, &init, &stage1_target, half, config)?;
            (local, trace, half)
        }
    };

    let splice_span = match spec.attack_type {
        AttackType::Insert => SampleSpan { start: insert_at.unwrap(), end: insert_at.unwrap() + local.len() },
        _ => span.unwrap(),
    };
    let assembled = assemble_global(x, &local, splice_span, spec.attack_type, config.ramp_len)?;

    let (adversarial, stage2_losses) =
        mifgsm(surrogate, &assembled, &target_transcript, stage2_iters, config)?;

    Ok(AttackResult {
        adversarial,
        local_fragment: local,
        span_used: splice_span,
        target_transcript,
        stage1_losses,
        stage2_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchTag, ModelParams};
    use crate::synth::{default_vocab, generate_corpus};

    fn y_abc() -> Transcript {
        Transcript::parse("arc bay cod")
    }

    #[test]
    fn target_transcript_delete() {
        let t = build_target_transcript(&y_abc(), &AttackSpec::delete(2)).unwrap();
        assert_eq!(t, Transcript::parse("arc cod"));
    }

    #[test]
    fn target_transcript_insert() {
        let t = build_target_transcript(&y_abc(), &AttackSpec::insert(1, "oak")).unwrap();
        assert_eq!(t, Transcript::parse("arc oak bay cod"));
        let t0 = build_target_transcript(&y_abc(), &AttackSpec::insert(0, "oak")).unwrap();
        assert_eq!(t0, Transcript::parse("oak arc bay cod"));
    }

    #[test]
    fn target_transcript_substitute() {
        let t = build_target_transcript(&y_abc(), &AttackSpec::substitute(2, "oak")).unwrap();
        assert_eq!(t, Transcript::parse("arc oak cod"));
    }

    #[test]
    fn target_transcript_lengths() {
        let y = y_abc();
        for k in 1..=3 {
            assert_eq!(build_target_transcript(&y, &AttackSpec::delete(k)).unwrap().len(), 2);
            assert_eq!(
                build_target_transcript(&y, &AttackSpec::substitute(k, "oak")).unwrap().len(),
                3
            );
        }
        for k in 0..=3 {
            assert_eq!(
                build_target_transcript(&y, &AttackSpec::insert(k, "oak")).unwrap().len(),
                4
            );
        }
    }

    #[test]
    fn spec_validation() {
        let vocab = default_vocab();
        let y = y_abc();
        assert!(AttackSpec::delete(0).validate(&y, &vocab).is_err());
        assert!(AttackSpec::delete(4).validate(&y, &vocab).is_err());
        assert!(AttackSpec::insert(0, "oak").validate(&y, &vocab).is_ok());
        assert!(AttackSpec::insert(4, "oak").validate(&y, &vocab).is_err());
        assert!(AttackSpec::substitute(1, "zzz").validate(&y, &vocab).is_err());
        let mut bad = AttackSpec::delete(1);
        bad.target_word = Some("oak".into());
        assert!(bad.validate(&y, &vocab).is_err());
    }

    #[test]
    fn init_local_delete_copies_span() {
        let x = Waveform::new((0..1000).map(|i| (i as f64 / 1000.0) - 0.5).collect()).unwrap();
        let span = SampleSpan::new(100, 300).unwrap();
        let frag = init_local(&x, span, &AttackSpec::delete(1), None).unwrap();
        assert_eq!(frag.samples(), &x.samples()[100..300]);
    }

    #[test]
    fn init_local_substitute_mean_of_equal_is_identity() {
        let x = Waveform::new((0..1000).map(|i| ((i as f64) * 0.01).sin() * 0.5).collect()).unwrap();
        let span = SampleSpan::new(200, 600).unwrap();
        let clip = x.slice(span).unwrap();
        let frag =
            init_local(&x, span, &AttackSpec::substitute(1, "oak"), Some(&clip)).unwrap();
        assert_eq!(frag.samples(), clip.samples());
    }

    #[test]
    fn init_local_insert_clips_to_input_peak() {
        let x = Waveform::new(vec![0.5, -0.5, 0.25]).unwrap();
        let clip = Waveform::new(vec![0.8, -0.9, 0.1]).unwrap();
        let frag = init_local(
            &x,
            SampleSpan::new(0, 1).unwrap(),
            &AttackSpec::insert(0, "oak"),
            Some(&clip),
        )
        .unwrap();
        assert_eq!(frag.samples(), &[0.5, -0.5, 0.1]);
    }

    #[test]
    fn assemble_lengths() {
        let x = Waveform::silence(5000);
        let local = Waveform::silence(700);
        let span = SampleSpan::new(1000, 1500).unwrap();
        let ins = assemble_global(&x, &local, span, AttackType::Insert, 80).unwrap();
        assert_eq!(ins.len(), 5700);
        let sub = assemble_global(&x, &local, span, AttackType::Substitute, 80).unwrap();
        assert_eq!(sub.len(), 5000 - 500 + 700);
    }

    #[test]
    fn assemble_identity_with_zero_ramp() {
        let x = Waveform::new((0..4000).map(|i| ((i as f64) * 0.013).sin() * 0.4).collect()).unwrap();
        let span = SampleSpan::new(800, 2000).unwrap();
        let local = x.slice(span).unwrap();
        let out = assemble_global(&x, &local, span, AttackType::Substitute, 0).unwrap();
        assert_eq!(out.samples(), x.samples());
    }

    fn tiny_model() -> ModelParams {
        ModelParams::new_random(ArchTag::ConvNetA, default_vocab(), 0.3, 11).unwrap()
    }

    #[test]
    fn mifgsm_first_step_is_pure_gradient() {
        let model = tiny_model();
        let vocab = default_vocab();
        let init = crate::synth::synthesize_word(&vocab, "arc", 3).unwrap();
        let target = Transcript::parse("bay");
        let config = AttackConfig::default();
        let (x1, trace) = mifgsm(&model, &init, &target, 1, &config).unwrap();
        assert_eq!(trace.len(), 1);
        // With g0 = 0, g1 = grad / ||grad||_1, so the step is
        // project(init - alpha * sign(grad)).
        let (_, grad) = model
            .joint_loss_with_lambda(&init, &target, config.lambda)
            .unwrap();
        let expected: Vec<f64> = init
            .samples()
            .iter()
            .zip(&grad)
            .map(|(&xi, &gi)| xi - config.alpha * sign(gi))
            .collect();
        let expected = project(&Waveform::new(expected).unwrap(), &init, config.delta).unwrap();
        assert_eq!(x1.samples(), expected.samples());
    }

    #[test]
    fn mifgsm_iterates_stay_in_ball() {
        let model = tiny_model();
        let vocab = default_vocab();
        let init = crate::synth::synthesize_word(&vocab, "cod", 5).unwrap();
        let target = Transcript::parse("dew");
        let config = AttackConfig { iters: 8, ..AttackConfig::default() };
        let (x, trace) = mifgsm(&model, &init, &target, 8, &config).unwrap();
        assert_eq!(trace.len(), 8);
        let linf = x
            .samples()
            .iter()
            .zip(init.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(linf <= config.delta + 1e-12, "moved {linf}");
        assert!(x.peak() <= 1.0);
    }

    #[test]
    fn attack_runs_both_stages_with_exact_iteration_split() {
        let model = tiny_model();
        let vocab = default_vocab();
        let corpus = generate_corpus(1, 3, 3, &vocab, 77).unwrap();
        let item = &corpus[0];
        let spec = AttackSpec::delete(2);
        let config = AttackConfig { iters: 10, ..AttackConfig::default() };
        let res = attack(&model, &item.waveform, &item.transcript, &spec, &config).unwrap();
        assert_eq!(res.stage1_losses.len(), 5);
        assert_eq!(res.stage2_losses.len(), 5);
        assert_eq!(res.adversarial.len(), item.waveform.len());
        assert!(res.adversarial.peak() <= 1.0);

        // Budget invariant vs the recomputed stage-2 initialization.
        let assembled = assemble_global(
            &item.waveform,
            &res.local_fragment,
            res.span_used,
            spec.attack_type,
            config.ramp_len,
        )
        .unwrap();
        let linf = res
            .adversarial
            .samples()
            .iter()
            .zip(assembled.samples())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(linf <= config.delta + 1e-6);
    }

    #[test]
    fn attack_insert_changes_length() {
        let model = tiny_model();
        let vocab = default_vocab();
        let corpus = generate_corpus(1, 3, 3, &vocab, 78).unwrap();
        let item = &corpus[0];
        let target = vocab
            .words()
            .iter()
            .find(|w| !item.transcript.contains(w))
            .unwrap();
        let spec = AttackSpec::insert(1, target);
        let config = AttackConfig { iters: 4, ..AttackConfig::default() };
        let res = attack(&model, &item.waveform, &item.transcript, &spec, &config).unwrap();
        assert_eq!(
            res.adversarial.len(),
            item.waveform.len() + res.local_fragment.len()
        );
        assert_eq!(res.span_used.len(), res.local_fragment.len());
    }

    #[test]
    fn attack_is_deterministic() {
        let model = tiny_model();
        let vocab = default_vocab();
        let corpus = generate_corpus(1, 3, 3, &vocab, 79).unwrap();
        let item = &corpus[0];
        let spec = AttackSpec::delete(1);
        let config = AttackConfig { iters: 6, ..AttackConfig::default() };
        let a = attack(&model, &item.waveform, &item.transcript, &spec, &config).unwrap();
        let b = attack(&model, &item.waveform, &item.transcript, &spec, &config).unwrap();
        assert_eq!(a.adversarial.samples(), b.adversarial.samples());
        assert_eq!(a.stage1_losses, b.stage1_losses);
        assert_eq!(a.stage2_losses, b.stage2_losses);
    }
}
