//! Trains the transducer on a toy corpus and reports held-out token error rate.
//!
//! `cargo run --release --example train_interpreter -- [steps] [plusplus|baseline]`

use tokcascade::interpreting::{paired_examples, train_interpreter, InterpreterConfig, TransducerModel, Variant};
use tokcascade::toyworld::{corpus_build, invert_semantic, ToySpec};
use tokcascade::training::TrainConfig;

fn main() -> tokcascade::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let steps = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(600);
    let variant = match args.get(2).map(String::as_str) {
        Some("baseline") => Variant::Baseline,
        _ => Variant::PlusPlus,
    };
    let spec = ToySpec::default();
    let corpus = corpus_build(&spec, 2000, 100, 11)?;
    let mut model = TransducerModel::new(
        InterpreterConfig {
            variant,
            ..Default::default()
        },
        1,
    )?;
    let cfg = TrainConfig {
        steps,
        ..TrainConfig::default()
    };
    let report = train_interpreter(&mut model, &spec, &corpus.train, &cfg, 2, |_, _| {})?;
    println!(
        "trained {} steps in {:.1}s, final loss {:.4}",
        report.steps,
        report.seconds,
        report.tail_loss(20)
    );

    let eval = paired_examples(&spec, &corpus.eval, 3)?;
    let (mut errors, mut total) = (0usize, 0usize);
    for (ex, utt) in eval.iter().zip(&corpus.eval) {
        let out = model.greedy_decode(&ex.text, &ex.prompt, model.config().max_symbols_per_frame)?;
        let inv = invert_semantic(&spec, out.tokens());
        let reference = spec.text_from_str(&utt.text)?;
        errors += strsim::generic_levenshtein(&inv.text, &reference.tokens().to_vec());
        total += reference.len();
    }
    println!("held-out TER {:.4}", errors as f64 / total as f64);
    Ok(())
}
