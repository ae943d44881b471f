//! Trains both interpreter variants with the same budget and compares
//! decoding speed and held-out NLL.
//!
//! `cargo run --release --example bench_variants -- [steps]`

use tokcascade::evalbench::{config_hash, eval_nll, measure_rtf, BenchReport};
use tokcascade::interpreting::{paired_examples, train_interpreter, InterpreterConfig, TransducerModel, Variant};
use tokcascade::toyworld::{corpus_build, ToySpec};
use tokcascade::training::TrainConfig;

fn main() -> tokcascade::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(800);
    let spec = ToySpec::default();
    let corpus = corpus_build(&spec, 2000, 100, 11)?;
    let examples = paired_examples(&spec, &corpus.eval, 3)?;
    let mut reports = Vec::new();
    for variant in [Variant::PlusPlus, Variant::Baseline] {
        let cfg = InterpreterConfig {
            variant,
            ..Default::default()
        };
        let mut m = TransducerModel::new(cfg, 1)?;
        train_interpreter(
            &mut m,
            &spec,
            &corpus.train,
            &TrainConfig {
                steps,
                ..Default::default()
            },
            2,
            |_, _| {},
        )?;
        let cap = m.config().max_symbols_per_frame;
        let rtf = measure_rtf(&examples, spec.frame_rate, 5, |ex| {
            Ok(m.greedy_decode(&ex.text, &ex.prompt, cap)?.len())
        })?;
        reports.push(BenchReport {
            variant: format!("{variant:?}"),
            rtf: rtf.rtf,
            nll: Some(eval_nll(&m, &examples)?),
            ter: None,
            speaker_accuracy: None,
            forward_passes: None,
            threads: rtf.threads,
            config_hash: config_hash(m.config())?,
        });
        println!("{variant:?}: joint network {} flops per lattice node", m.joint_flops());
    }
    print!("{}", BenchReport::table(&reports));
    Ok(())
}
