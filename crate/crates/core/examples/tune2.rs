// Scratch harness for attack feasibility. Not part of the deliverable.
use advox_core::attack::{attack, AttackConfig, AttackType};
use advox_core::eval::{generate_batch, judge_sroa, word_accuracy};
use advox_core::model::{train, ArchTag, TrainConfig};
use advox_core::synth::{default_vocab, generate_corpus};
use rayon::prelude::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(20);

    let vocab = default_vocab();
    let train_corpus = generate_corpus(100, 3, 6, &vocab, 1000).unwrap();
    let eval_corpus = generate_corpus(n, 3, 6, &vocab, 2000).unwrap();

    let cfg = TrainConfig { epochs, ..TrainConfig::default() };
    let t0 = std::time::Instant::now();
    let (surrogate, _) = train(ArchTag::ConvNetA, &vocab, &train_corpus, &cfg).unwrap();
    let (target, _) = train(ArchTag::RecurrentB, &vocab, &train_corpus, &cfg).unwrap();
    println!(
        "trained both in {:?}; acc conv {:.3} rnn {:.3}",
        t0.elapsed(),
        word_accuracy(&surrogate, &eval_corpus).unwrap(),
        word_accuracy(&target, &eval_corpus).unwrap()
    );

    let attack_cfg = AttackConfig::default();
    let types = [AttackType::Delete, AttackType::Insert, AttackType::Substitute];
    let batch = generate_batch(&eval_corpus, &vocab, &types, 42);

    let t0 = std::time::Instant::now();
    let results: Vec<_> = batch
        .par_iter()
        .map(|bi| {
            let item = &eval_corpus[bi.utterance_id];
            let res = attack(&surrogate, &item.waveform, &item.transcript, &bi.spec, &attack_cfg)
                .unwrap();
            (bi, res)
        })
        .collect();
    println!("{} attacks in {:?}", results.len(), t0.elapsed());

    for ty in types {
        let mut wb_ok = 0;
        let mut wb_exact = 0;
        let mut tf_ok = 0;
        let mut count = 0;
        let mut loss_drop = 0;
        for (bi, res) in &results {
            if bi.spec.attack_type != ty {
                continue;
            }
            count += 1;
            let item = &eval_corpus[bi.utterance_id];
            let wb = surrogate.decode_greedy(&res.adversarial).unwrap();
            if judge_sroa(&wb, &bi.spec, &item.transcript) {
                wb_ok += 1;
            }
            if wb == res.target_transcript {
                wb_exact += 1;
            }
            let tf = target.decode_greedy(&res.adversarial).unwrap();
            if judge_sroa(&tf, &bi.spec, &item.transcript) {
                tf_ok += 1;
            }
            let all: Vec<f64> = res
                .stage1_losses
                .iter()
                .chain(&res.stage2_losses)
                .copied()
                .collect();
            if all.last() < all.first() {
                loss_drop += 1;
            }
        }
        println!(
            "{ty}: whitebox sroa {}/{count}, exact {}/{count}, transfer sroa {}/{count}, loss-drop {}/{count}",
            wb_ok, wb_exact, tf_ok, loss_drop
        );
    }
}
