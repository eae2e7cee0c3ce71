//! Transfer-experiment harness: runs attack batches against one or more
//! surrogates, evaluates every configured transcription target, and emits
//! aggregated reports.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{cer, judge_sroa, med};
use super::transcribe::Transcriber;
use crate::attack::{attack_variant, AttackConfig, AttackSpec, AttackType, MethodVariant};
use crate::audio::{snr_db, wav_write};
use crate::error::Result;
use crate::model::ModelParams;
use crate::synth::CorpusItem;
use crate::util::derive_seed;

/// One attack to run: which utterance, and what edit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchItem {
    pub utterance_id: usize,
    #[serde(flatten)]
    pub spec: AttackSpec,
}

/// Builds a batch with one attack per (type, utterance): positions are
/// drawn uniformly, target words are drawn from outside the utterance so
/// the success predicates stay unambiguous.
pub fn generate_batch(
    corpus: &[CorpusItem],
    vocab: &crate::model::Vocab,
    types: &[AttackType],
    seed: u64,
) -> Vec<BatchItem> {
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    fn fresh_word(item: &CorpusItem, vocab: &crate::model::Vocab, rng: &mut ChaCha8Rng) -> String {
        let candidates: Vec<&String> = vocab
            .words()
            .iter()
            .filter(|w| !item.transcript.contains(w))
            .collect();
        candidates[rng.random_range(0..candidates.len())].clone()
    }
    let mut batch = Vec::new();
    for &attack_type in types {
        for (utterance_id, item) in corpus.iter().enumerate() {
            let m = item.transcript.len();
            let spec = match attack_type {
                AttackType::Delete => AttackSpec::delete(rng.random_range(1..=m)),
                AttackType::Insert => {
                    let w = fresh_word(item, vocab, &mut rng);
                    AttackSpec::insert(rng.random_range(0..=m), &w)
                }
                AttackType::Substitute => {
                    let w = fresh_word(item, vocab, &mut rng);
                    AttackSpec::substitute(rng.random_range(1..=m), &w)
                }
            };
            batch.push(BatchItem { utterance_id, spec });
        }
    }
    batch
}

/// A surrogate plus the attack procedure to use with it; `name` labels the
/// report rows.
pub struct MethodSpec {
    pub name: String,
    pub surrogate: ModelParams,
    pub variant: MethodVariant,
}

/// Raw per-(attack, target) evaluation record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Record {
    pub utterance_id: usize,
    pub method: String,
    pub attack_type: AttackType,
    pub target: String,
    pub decoded: String,
    pub target_transcript: String,
    pub success: bool,
    pub cer: f64,
    pub med: usize,
    pub snr_db: f64,
    pub retries: u32,
    pub wav_path: String,
}

/// One aggregated report row per (method, attack type, target).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub attack_type: AttackType,
    pub target: String,
    pub n: usize,
    pub snr_db: f64,
    pub sroa_pct: f64,
    pub cer: f64,
    pub med: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub records: Vec<Record>,
}

impl Report {
    /// CSV rendering of the aggregate rows (stable order and formatting).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,attack_type,target,n,snr_db,sroa_pct,cer,med\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
                r.method, r.attack_type, r.target, r.n, r.snr_db, r.sroa_pct, r.cer, r.med
            ));
        }
        out
    }

    /// SRoA (percent) for a method and attack type on a given target.
    pub fn sroa(&self, method: &str, attack_type: AttackType, target: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.attack_type == attack_type && r.target == target)
            .map(|r| r.sroa_pct)
    }
}

/// Runs every batch item for every method, evaluates each configured
/// target, aggregates, and (optionally) persists everything under
/// `out_dir`: adversarial WAVs, `records.jsonl` (streamed, so partial
/// results survive failures), `report.csv` and `report.json`.
pub fn run_experiment(
    methods: &[MethodSpec],
    corpus: &[CorpusItem],
    batch: &[BatchItem],
    targets: &[(String, Transcriber)],
    attack_cfg: &AttackConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<Report> {
    let mut records_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            Some(std::fs::File::create(dir.join("records.jsonl"))?)
        }
        None => None,
    };

    let mut records: Vec<Record> = Vec::new();
    for (method_idx, method) in methods.iter().enumerate() {
        // Attacks are pure per item; generate them in parallel, keep order.
        let attacks: Vec<_> = batch
            .par_iter()
            .map(|bi| {
                let item = &corpus[bi.utterance_id];
                let run_seed = derive_seed(seed, (method_idx * batch.len() + bi.utterance_id) as u64);
                attack_variant(
                    &method.surrogate,
                    &item.waveform,
                    &item.transcript,
                    &bi.spec,
                    attack_cfg,
                    method.variant,
                    run_seed,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        for (bi, result) in batch.iter().zip(&attacks) {
            let item = &corpus[bi.utterance_id];
            let wav_name = format!(
                "{}_{}_{:04}.wav",
                method.name, bi.spec.attack_type, bi.utterance_id
            );
            if let Some(dir) = out_dir {
                wav_write(&result.adversarial, &dir.join(&wav_name))?;
            }
            let snr = snr_db(
                &item.waveform,
                &result.adversarial,
                bi.spec.attack_type,
                result.span_used,
            )?;
            for (target_name, transcriber) in targets {
                let outcome = transcriber.transcribe(&result.adversarial)?;
                let record = Record {
                    utterance_id: bi.utterance_id,
                    method: method.name.clone(),
                    attack_type: bi.spec.attack_type,
                    target: target_name.clone(),
                    decoded: outcome.transcript.to_string(),
                    target_transcript: result.target_transcript.to_string(),
                    success: judge_sroa(&outcome.transcript, &bi.spec, &item.transcript),
                    cer: cer(&outcome.transcript, &result.target_transcript)?,
                    med: med(&outcome.transcript, &result.target_transcript),
                    snr_db: snr,
                    retries: outcome.retries,
                    wav_path: wav_name.clone(),
                };
                if let Some(f) = records_file.as_mut() {
                    writeln!(f, "{}", serde_json::to_string(&record)?)?;
                }
                records.push(record);
            }
        }
    }

    let rows = aggregate(methods, targets, &records);
    let report = Report { rows, records };
    if let Some(dir) = out_dir {
        std::fs::write(dir.join("report.csv"), report.to_csv())?;
        std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

const TYPE_ORDER: [AttackType; 3] = [AttackType::Delete, AttackType::Insert, AttackType::Substitute];

fn aggregate(methods: &[MethodSpec], targets: &[(String, Transcriber)], records: &[Record]) -> Vec<ReportRow> {
    let mut rows = Vec::new();
    for method in methods {
        for &attack_type in &TYPE_ORDER {
            for (target_name, _) in targets {
                let group: Vec<&Record> = records
                    .iter()
                    .filter(|r| {
                        r.method == method.name
                            && r.attack_type == attack_type
                            && &r.target == target_name
                    })
                    .collect();
                if group.is_empty() {
                    continue;
                }
                let n = group.len() as f64;
                rows.push(ReportRow {
                    method: method.name.clone(),
                    attack_type,
                    target: target_name.clone(),
                    n: group.len(),
                    snr_db: group.iter().map(|r| r.snr_db).sum::<f64>() / n,
                    sroa_pct: 100.0 * group.iter().filter(|r| r.success).count() as f64 / n,
                    cer: group.iter().map(|r| r.cer).sum::<f64>() / n,
                    med: group.iter().map(|r| r.med as f64).sum::<f64>() / n,
                });
            }
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchTag, Transcript};
    use crate::synth::{default_vocab, generate_corpus};

    #[test]
    fn batch_generation_is_valid_and_reproducible() {
        let vocab = default_vocab();
        let corpus = generate_corpus(6, 3, 5, &vocab, 12).unwrap();
        let types = [AttackType::Delete, AttackType::Insert, AttackType::Substitute];
        let a = generate_batch(&corpus, &vocab, &types, 3);
        let b = generate_batch(&corpus, &vocab, &types, 3);
        assert_eq!(a, b);
        assert_eq!(a.len(), 18);
        for bi in &a {
            let item = &corpus[bi.utterance_id];
            bi.spec.validate(&item.transcript, &vocab).unwrap();
            if let Some(w) = &bi.spec.target_word {
                assert!(!item.transcript.contains(w));
            }
        }
    }

    #[test]
    fn experiment_report_shape_and_stub_target() {
        let vocab = default_vocab();
        let corpus = generate_corpus(2, 3, 3, &vocab, 21).unwrap();
        let surrogate =
            ModelParams::new_random(ArchTag::ConvNetA, vocab.clone(), 0.3, 5).unwrap();
        let batch = generate_batch(&corpus, &vocab, &[AttackType::Delete], 4);
        let methods = [MethodSpec {
            name: "two-stage".into(),
            surrogate,
            variant: MethodVariant::TwoStage,
        }];
        let stub = Transcriber::Stub(
            super::super::transcribe::StubTranscriber::new(vec![Transcript::parse("arc")]).unwrap(),
        );
        let targets = [("stub".to_string(), stub)];
        let cfg = AttackConfig { iters: 2, ..AttackConfig::default() };
        let report = run_experiment(&methods, &corpus, &batch, &targets, &cfg, 0, None).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.rows.len(), 1);
        let row = &report.rows[0];
        assert_eq!(row.n, 2);
        assert_eq!(row.method, "two-stage");
        let csv = report.to_csv();
        assert!(csv.starts_with("method,attack_type,target,n,snr_db,sroa_pct,cer,med\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
