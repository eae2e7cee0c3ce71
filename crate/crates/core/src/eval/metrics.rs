//! Attack metrics: edit distance, character error rate, attack-success
//! judgments, and word accuracy.

use crate::attack::{AttackSpec, AttackType};
use crate::error::{Error, Result};
use crate::model::{ModelParams, Transcript};
use crate::synth::CorpusItem;

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, ai) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, bj) in b.iter().enumerate() {
            let cost = usize::from(ai != bj);
            cur[j + 1] = (prev[j + 1] + 1).min(cur[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Character error rate: character-level edit distance between the
/// space-joined word streams, divided by the reference length.
pub fn cer(hyp: &Transcript, reference: &Transcript) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Parameter("cer: empty reference".into()));
    }
    let h: Vec<char> = hyp.to_string().chars().collect();
    let r: Vec<char> = reference.to_string().chars().collect();
    Ok(edit_distance(&h, &r) as f64 / r.len() as f64)
}

/// Word-level minimum edit distance.
pub fn med(hyp: &Transcript, reference: &Transcript) -> usize {
    edit_distance(hyp.words(), reference.words())
}

/// Attack-success predicate.
///
/// * delete: the removed word must be absent from the decode;
/// * insert: the target word must be present;
/// * substitute: the target word present and the replaced word absent.
pub fn judge_sroa(decoded: &Transcript, spec: &AttackSpec, y: &Transcript) -> bool {
    match spec.attack_type {
        AttackType::Delete => {
            let victim = &y.words()[spec.k - 1];
            !decoded.contains(victim)
        }
        AttackType::Insert => {
            let target = spec.target_word.as_deref().unwrap_or("");
            decoded.contains(target)
        }
        AttackType::Substitute => {
            let victim = &y.words()[spec.k - 1];
            let target = spec.target_word.as_deref().unwrap_or("");
            decoded.contains(target) && !decoded.contains(victim)
        }
    }
}

/// Corpus-level word accuracy of greedy decoding:
/// 1 - (total word edit distance) / (total reference words).
pub fn word_accuracy(params: &ModelParams, corpus: &[CorpusItem]) -> Result<f64> {
    let mut errors = 0usize;
    let mut total = 0usize;
    for item in corpus {
        let decoded = params.decode_greedy(&item.waveform)?;
        errors += med(&decoded, &item.transcript);
        total += item.transcript.len();
    }
    if total == 0 {
        return Err(Error::Parameter("word accuracy over empty corpus".into()));
    }
    Ok(1.0 - errors as f64 / total as f64)
}
