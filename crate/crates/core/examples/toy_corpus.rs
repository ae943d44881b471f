//! Builds a small toy corpus, writes its manifests, and renders one
//! utterance to a WAV file.
//!
//! `cargo run --example toy_corpus -- [out_dir]`

use std::path::PathBuf;

use tokcascade::toyworld::{classify_speaker, corpus_build, invert_semantic, render_waveform, write_wav, ToySpec};

fn main() -> tokcascade::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "toy_corpus".into()));
    let spec = ToySpec::default();
    let corpus = corpus_build(&spec, 200, 20, 7)?;
    corpus.write(&out)?;

    let u = &corpus.eval[0];
    println!(
        "{} text {:?} rate {} pitch {} speaker {}",
        u.id, u.text, u.r, u.p, u.sigma
    );
    println!("semantic {:?}", u.semantic);
    let streams = u.grid().to_streams();
    println!("coarse group 0 {:?}", streams[0][0]);

    let inv = invert_semantic(&spec, &u.semantic);
    println!(
        "inverted text {:?} rate {:?} pitch {:?}",
        spec.text_to_string(&inv.text),
        inv.rate,
        inv.pitch
    );
    println!(
        "classified speaker {:?}",
        classify_speaker(&spec, &u.semantic, &u.grid())?
    );

    let wav = out.join(format!("{}.wav", u.id));
    write_wav(&spec, &wav, &render_waveform(&spec, &u.grid()))?;
    println!("wrote manifests and {}", wav.display());
    Ok(())
}
