// Scratch harness for hyperparameter exploration. Not part of the deliverable.
use advox_core::align::{forced_align, frame_span_to_samples};
use advox_core::eval::word_accuracy;
use advox_core::frontend::FRAME_HOP;
use advox_core::model::{train, ArchTag, TrainConfig};
use advox_core::synth::{default_vocab, generate_corpus};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.02);

    let vocab = default_vocab();
    let t0 = std::time::Instant::now();
    let train_corpus = generate_corpus(100, 3, 6, &vocab, 1000).unwrap();
    let eval_corpus = generate_corpus(50, 3, 6, &vocab, 2000).unwrap();
    println!("corpus generated in {:?}", t0.elapsed());

    for arch in [ArchTag::ConvNetA, ArchTag::RecurrentB] {
        let cfg = TrainConfig { epochs, lr, ..TrainConfig::default() };
        let t0 = std::time::Instant::now();
        let (params, stats) = train(arch, &vocab, &train_corpus, &cfg).unwrap();
        let dt = t0.elapsed();
        let acc_train = word_accuracy(&params, &train_corpus).unwrap();
        let acc_eval = word_accuracy(&params, &eval_corpus).unwrap();
        println!(
            "{arch:?}: {epochs} epochs lr {lr} in {dt:?}; loss {:.3} -> {:.3}; acc train {acc_train:.3} eval {acc_eval:.3}",
            stats.first().unwrap().mean_joint_loss,
            stats.last().unwrap().mean_joint_loss,
        );

        // ALM accuracy vs generator ground truth, sample space, +/-320.
        let mut ok = 0usize;
        let mut total = 0usize;
        let mut sum_start_err = 0.0;
        let mut sum_end_err = 0.0;
        let mut worst: Vec<f64> = Vec::new();
        for item in &train_corpus {
            let logits = params.ctc_frame_logits(&item.waveform).unwrap();
            let classes = params.vocab().ctc_classes(&item.transcript).unwrap();
            if let Ok(spans) = forced_align(&logits, &classes) {
                for (span, truth) in spans.iter().zip(&item.true_spans) {
                    let located = frame_span_to_samples(*span, item.waveform.len()).unwrap();
                    let ds = located.start as f64 - truth.start as f64;
                    let de = located.end as f64 - truth.end as f64;
                    sum_start_err += ds;
                    sum_end_err += de;
                    if ds.abs() <= 2.0 * FRAME_HOP as f64 && de.abs() <= 2.0 * FRAME_HOP as f64 {
                        ok += 1;
                    }
                    worst.push(ds.abs().max(de.abs()));
                    total += 1;
                }
            } else {
                total += item.transcript.len();
            }
        }
        worst.sort_by(|a, b| a.partial_cmp(b).unwrap());
        println!(
            "  ALM: {}/{} within +/-320 samples ({:.1}%), mean start err {:+.0}, mean end err {:+.0}, p95 err {:.0}",
            ok,
            total,
            100.0 * ok as f64 / total as f64,
            sum_start_err / total as f64,
            sum_end_err / total as f64,
            worst[(worst.len() * 95) / 100]
        );
    }
}
