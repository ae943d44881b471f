//! Trains the acoustic token generator and reports, on held-out utterances,
//! how much the acoustic prompt helps and how often decoded grids carry the
//! prompt's speaker.
//!
//! `cargo run --release --example train_speaker -- [steps] [lr] [final_lr_ratio] [weight_decay] [batch_size] [decay_steps]`

use rand::{Rng, SeedableRng};
use tokcascade::numerics::Graph;
use tokcascade::speaking::{
    g_ipd_decode, prompt_from, speaker_recipe, train_speaker, DecodeConfig, GmlmInput, Level, MaskPattern,
    PromptSource, SpeakerIndex, SpeakingConfig, SpeakingModel,
};
use tokcascade::toyworld::{classify_speaker, corpus_build, ToySpec, Utterance};
use tokcascade::training::TrainConfig;

/// Mean per-token NLL of the coarse level with every acoustic token hidden.
fn coarse_nll(
    model: &SpeakingModel,
    spec: &ToySpec,
    target: &Utterance,
    prompt: &Utterance,
) -> tokcascade::Result<f64> {
    let mut mask = MaskPattern::all(target.len());
    let mut g = Graph::new();
    let (s, y, p) = (target.semantic_seq(), target.grid(), prompt_from(spec, prompt)?);
    let input = GmlmInput {
        semantic: &s,
        tokens: &y,
        mask: &mask,
    };
    let (logits, spans) = model.forward_batch(&mut g, &[input], PromptSource::Recompute(&[&p]))?;
    mask.set_level(Level::Fine, false);
    let loss = model
        .gmlm_loss_node(&mut g, logits, spans[0].clone(), &y, &mask)?
        .normalized(&mut g);
    g.value(loss).item()
}

fn main() -> tokcascade::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let arg = |i: usize| std::env::args().nth(i).and_then(|s| s.parse::<f64>().ok());
    let defaults = speaker_recipe();
    let spec = ToySpec::default();
    let corpus = corpus_build(&spec, 2000, 100, 11)?;
    let mut model = SpeakingModel::new(SpeakingConfig::default(), 1)?;
    let cfg = TrainConfig {
        steps: arg(1).map_or(defaults.steps, |v| v as usize),
        lr: arg(2).unwrap_or(defaults.lr),
        final_lr_ratio: arg(3).unwrap_or(defaults.final_lr_ratio),
        weight_decay: arg(4).unwrap_or(defaults.weight_decay),
        batch_size: arg(5).map_or(defaults.batch_size, |v| v as usize),
        decay_steps: arg(6).map_or(defaults.decay_steps, |v| Some(v as usize)),
        ..defaults
    };
    let report = train_speaker(&mut model, &spec, &corpus.train, &cfg, 2, |_, _| {})?;
    println!(
        "trained {} steps in {:.1}s, final loss {:.4}",
        report.steps,
        report.seconds,
        report.tail_loss(20)
    );

    let eval = &corpus.eval;
    let index = SpeakerIndex::new(eval);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let (mut same, mut other, mut hits) = (0.0, 0.0, 0);
    for (i, u) in eval.iter().enumerate() {
        let j = index.partner(eval, i, &mut rng);
        let k = loop {
            let k = rng.random_range(0..eval.len());
            if eval[k].sigma != u.sigma {
                break k;
            }
        };
        same += coarse_nll(&model, &spec, u, &eval[j])?;
        other += coarse_nll(&model, &spec, u, &eval[k])?;
        let grid = g_ipd_decode(
            &model,
            &u.semantic_seq(),
            &prompt_from(&spec, &eval[j])?,
            &DecodeConfig {
                seed: i as u64,
                ..Default::default()
            },
        )?;
        if classify_speaker(&spec, &u.semantic, &grid)? == Some(u.sigma) {
            hits += 1;
        }
    }
    let n = eval.len() as f64;
    println!(
        "fully masked coarse NLL: same-speaker prompt {:.3}, other-speaker prompt {:.3}",
        same / n,
        other / n
    );
    println!("speaker accuracy {:.3}", hits as f64 / n);
    Ok(())
}
