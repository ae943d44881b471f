//! Text to waveform through both stages, with the semantic and acoustic
//! prompts taken from different speakers. Trained models are cached as
//! checkpoints in the output directory.
//!
//! `cargo run --release --example synthesize -- [out_dir] [text]`

use std::path::{Path, PathBuf};

use tokcascade::cli::Checkpoint;
use tokcascade::interpreting::{train_interpreter, InterpreterConfig, TransducerModel};
use tokcascade::speaking::{
    g_ipd_decode, prompt_from, speaker_recipe, train_speaker, DecodeConfig, SpeakingConfig, SpeakingModel,
};
use tokcascade::toyworld::{classify_speaker, corpus_build, invert_semantic, render_waveform, write_wav, ToySpec};
use tokcascade::training::TrainConfig;

fn cached<M>(
    path: &Path,
    pick: impl Fn(Checkpoint) -> Option<M>,
    train: impl FnOnce() -> tokcascade::Result<(M, Checkpoint)>,
) -> tokcascade::Result<M> {
    if path.exists() {
        if let Some(m) = pick(Checkpoint::load(path)?) {
            return Ok(m);
        }
    }
    let (m, ck) = train()?;
    ck.save(path)?;
    Ok(m)
}

fn main() -> tokcascade::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synth_out".into()));
    let text = std::env::args().nth(2).unwrap_or_else(|| "hello".into());
    std::fs::create_dir_all(&out)?;
    let spec = ToySpec::default();
    let corpus = corpus_build(&spec, 2000, 100, 11)?;

    let interp = cached(
        &out.join("interpreter.tkc"),
        |c| c.interpreter,
        || {
            let mut m = TransducerModel::new(InterpreterConfig::default(), 1)?;
            let cfg = TrainConfig {
                steps: 3000,
                ..TrainConfig::default()
            };
            train_interpreter(&mut m, &spec, &corpus.train, &cfg, 2, |_, _| {})?;
            Ok((
                m.clone(),
                Checkpoint {
                    interpreter: Some(m),
                    ..Default::default()
                },
            ))
        },
    )?;
    let speaker = cached(
        &out.join("speaker.tkc"),
        |c| c.speaker,
        || {
            let mut m = SpeakingModel::new(SpeakingConfig::default(), 1)?;
            train_speaker(&mut m, &spec, &corpus.train, &speaker_recipe(), 2, |_, _| {})?;
            Ok((
                m.clone(),
                Checkpoint {
                    speaker: Some(m),
                    ..Default::default()
                },
            ))
        },
    )?;

    let p_s = &corpus.eval[0];
    let p_a = corpus
        .eval
        .iter()
        .find(|u| u.sigma != p_s.sigma)
        .expect("more than one speaker");
    let x = spec.text_from_str(&text)?;
    let s = interp.greedy_decode(&x, &p_s.semantic_seq(), interp.config().max_symbols_per_frame)?;
    let grid = g_ipd_decode(&speaker, &s, &prompt_from(&spec, p_a)?, &DecodeConfig::default())?;

    let inv = invert_semantic(&spec, s.tokens());
    println!(
        "semantic prompt: rate {} pitch {}; acoustic prompt: speaker {}",
        p_s.r, p_s.p, p_a.sigma
    );
    println!(
        "heard {:?} at rate {:?} pitch {:?}, speaker {:?}",
        spec.text_to_string(&inv.text),
        inv.rate,
        inv.pitch,
        classify_speaker(&spec, s.tokens(), &grid)?
    );
    let wav = out.join("synth.wav");
    write_wav(&spec, &wav, &render_waveform(&spec, &grid))?;
    println!("{} frames written to {}", grid.len(), wav.display());
    Ok(())
}
