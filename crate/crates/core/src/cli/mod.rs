//! Command-line entry point, configuration files and checkpoints.

pub mod checkpoint;
pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub use checkpoint::Checkpoint;
pub use config::Config;

use crate::error::{bail, Error, Result};
use crate::evalbench::{
    config_hash, corpus_token_error_rate, eval_nll, measure_rtf, measure_rtf_parallel, speaker_accuracy, thread_pool,
    BenchReport, SpeakerCase,
};
use crate::interpreting::{paired_examples, train_interpreter, TransducerModel, Variant};
use crate::speaking::{
    g_ipd_decode, g_ipd_decode_traced, prompt_from, train_speaker, CacheMode, SpeakerIndex, SpeakingModel,
};
use crate::tokens::SemanticSeq;
use crate::toyworld::{corpus_build, invert_semantic, render_waveform, write_wav, Corpus, Utterance};

#[derive(Parser, Debug)]
#[command(
    name = "tokcascade",
    version,
    about = "Two-stage token cascade for toy speech synthesis"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Plusplus,
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate train/eval manifests.
    CorpusGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the text-to-semantic transducer.
    TrainInterpreter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the variant in the config file.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
    },
    /// Train the semantic-to-acoustic generator.
    TrainSpeaker {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Text plus prompts to tokens and a WAV file.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        interpreter: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        text: String,
        /// Utterance id whose semantic tokens set rate and pitch.
        #[arg(long)]
        semantic_prompt: String,
        /// Utterance id whose tokens set the speaker.
        #[arg(long)]
        acoustic_prompt: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Held-out TER, speaker accuracy and NLL.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        interpreter: PathBuf,
        #[arg(long)]
        speaker: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Real-time factor and NLL of one or more interpreter checkpoints.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, required = true)]
        interpreter: Vec<PathBuf>,
        #[arg(long)]
        speaker: Option<PathBuf>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        /// Also time concurrent decoding across utterances.
        #[arg(long)]
        threads: bool,
    },
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns 0 on success, 2 for usage errors, 3 for configuration errors and
/// 1 for other failures.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => 3,
                _ => 1,
            }
        }
    }
}

fn corpus_dir(cfg: &Config, flag: Option<PathBuf>) -> Result<PathBuf> {
    flag.or_else(|| cfg.paths.corpus_dir.clone())
        .ok_or_else(|| Error::Config("no corpus directory: pass --corpus or set paths.corpus_dir".into()))
}

fn load_corpus(cfg: &Config, flag: Option<PathBuf>) -> Result<Corpus> {
    Corpus::read(&corpus_dir(cfg, flag)?)
}

fn load_interpreter(path: &Path) -> Result<TransducerModel> {
    Checkpoint::load(path)?
        .interpreter
        .ok_or_else(|| Error::Input(format!("{} holds no interpreter", path.display())))
}

fn load_speaker(path: &Path) -> Result<SpeakingModel> {
    Checkpoint::load(path)?
        .speaker
        .ok_or_else(|| Error::Input(format!("{} holds no speaker model", path.display())))
}

fn limited(utts: &[Utterance], limit: Option<usize>) -> &[Utterance] {
    &utts[..limit.unwrap_or(utts.len()).min(utts.len())]
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::CorpusGen { config, out } => {
            let cfg = Config::load(&config)?;
            let corpus = corpus_build(&cfg.toy, cfg.corpus.n_train, cfg.corpus.n_eval, cfg.seed)?;
            corpus.write(&out)?;
            println!(
                "wrote {} train and {} eval utterances to {}",
                corpus.train.len(),
                corpus.eval.len(),
                out.display()
            );
        }
        Command::TrainInterpreter {
            config,
            corpus,
            out,
            variant,
        } => {
            let mut cfg = Config::load(&config)?;
            if let Some(v) = variant {
                cfg.interpreter.variant = match v {
                    VariantArg::Plusplus => Variant::PlusPlus,
                    VariantArg::Baseline => Variant::Baseline,
                };
            }
            let corpus = load_corpus(&cfg, corpus)?;
            let mut model = TransducerModel::new(cfg.interpreter.clone(), cfg.seed)?;
            let report = train_interpreter(
                &mut model,
                &cfg.toy,
                &corpus.train,
                &cfg.train_interpreter,
                cfg.seed,
                |_, _| {},
            )?;
            Checkpoint {
                interpreter: Some(model),
                ..Default::default()
            }
            .save(&out)?;
            println!(
                "trained {} steps in {:.1}s, final loss {:.4}; saved {}",
                report.steps,
                report.seconds,
                report.tail_loss(20),
                out.display()
            );
        }
        Command::TrainSpeaker { config, corpus, out } => {
            let cfg = Config::load(&config)?;
            let corpus = load_corpus(&cfg, corpus)?;
            let mut model = SpeakingModel::new(cfg.speaker.clone(), cfg.seed)?;
            let report = train_speaker(
                &mut model,
                &cfg.toy,
                &corpus.train,
                &cfg.train_speaker,
                cfg.seed,
                |_, _| {},
            )?;
            Checkpoint {
                speaker: Some(model),
                ..Default::default()
            }
            .save(&out)?;
            println!(
                "trained {} steps in {:.1}s, final loss {:.4}; saved {}",
                report.steps,
                report.seconds,
                report.tail_loss(20),
                out.display()
            );
        }
        Command::Synthesize {
            config,
            interpreter,
            speaker,
            corpus,
            text,
            semantic_prompt,
            acoustic_prompt,
            out,
        } => {
            let cfg = Config::load(&config)?;
            let corpus = load_corpus(&cfg, corpus)?;
            let find = |id: &str| -> Result<&Utterance> {
                corpus
                    .train
                    .iter()
                    .chain(&corpus.eval)
                    .find(|u| u.id == id)
                    .ok_or_else(|| Error::Input(format!("no utterance with id {id}")))
            };
            let p_s = find(&semantic_prompt)?;
            let p_a = find(&acoustic_prompt)?;
            let x = cfg.toy.text_from_str(&text)?;
            let interp = load_interpreter(&interpreter)?;
            let spk = load_speaker(&speaker)?;
            let s = interp.greedy_decode(
                &x,
                &SemanticSeq::new(p_s.semantic.clone(), cfg.toy.semantic_vocab())?,
                cfg.interpreter.max_symbols_per_frame,
            )?;
            if s.is_empty() {
                bail!(Data, "interpreter produced no semantic tokens");
            }
            let grid = g_ipd_decode(&spk, &s, &prompt_from(&cfg.toy, p_a)?, &cfg.decode_config(0))?;
            fs::create_dir_all(&out)?;
            let wav = out.join("synth.wav");
            write_wav(&cfg.toy, &wav, &render_waveform(&cfg.toy, &grid))?;
            #[derive(Serialize)]
            struct Tokens<'a> {
                text: &'a str,
                semantic: &'a [usize],
                acoustic: [[Vec<usize>; 2]; 2],
            }
            let tokens = Tokens {
                text: &text,
                semantic: s.tokens(),
                acoustic: grid.to_streams(),
            };
            fs::write(out.join("tokens.json"), serde_json::to_string(&tokens)?)?;
            println!("wrote {} frames to {}", grid.len(), wav.display());
        }
        Command::Eval {
            config,
            interpreter,
            speaker,
            corpus,
            limit,
        } => {
            let cfg = Config::load(&config)?;
            let corpus = load_corpus(&cfg, corpus)?;
            let eval = limited(&corpus.eval, limit);
            let interp = load_interpreter(&interpreter)?;
            let spk = load_speaker(&speaker)?;
            let examples = paired_examples(&cfg.toy, eval, cfg.seed)?;
            let mut pairs = Vec::with_capacity(examples.len());
            for (ex, u) in examples.iter().zip(eval) {
                let s = interp.greedy_decode(&ex.text, &ex.prompt, cfg.interpreter.max_symbols_per_frame)?;
                pairs.push((
                    invert_semantic(&cfg.toy, s.tokens()).text,
                    cfg.toy.text_from_str(&u.text)?.tokens().to_vec(),
                ));
            }
            let ter = corpus_token_error_rate(&pairs)?;
            let nll = eval_nll(&interp, &examples)?;
            let index = SpeakerIndex::new(eval);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(cfg.seed);
            let mut cases = Vec::with_capacity(eval.len());
            for (i, u) in eval.iter().enumerate() {
                let j = index.partner(eval, i, &mut rng);
                let grid = g_ipd_decode(
                    &spk,
                    &u.semantic_seq(),
                    &prompt_from(&cfg.toy, &eval[j])?,
                    &cfg.decode_config(i as u64),
                )?;
                cases.push(SpeakerCase {
                    semantic: u.semantic.clone(),
                    grid,
                    expected: eval[j].sigma,
                });
            }
            let acc = speaker_accuracy(&cfg.toy, &cases)?;
            println!(
                "{}",
                serde_json::json!({ "utterances": eval.len(), "ter": ter, "nll": nll, "speaker_accuracy": acc })
            );
        }
        Command::Bench {
            config,
            interpreter,
            speaker,
            corpus,
            limit,
            threads,
        } => {
            let cfg = Config::load(&config)?;
            let corpus = load_corpus(&cfg, corpus)?;
            let eval = limited(&corpus.eval, limit);
            let examples = paired_examples(&cfg.toy, eval, cfg.seed)?;
            let cap = cfg.interpreter.max_symbols_per_frame;
            let mut reports = Vec::new();
            let pool = if threads { Some(thread_pool()?) } else { None };
            for path in &interpreter {
                let m = load_interpreter(path)?;
                let decode = |ex: &crate::interpreting::Example| Ok(m.greedy_decode(&ex.text, &ex.prompt, cap)?.len());
                let mut runs = vec![measure_rtf(&examples, cfg.toy.frame_rate, 5, decode)?];
                if let Some(pool) = &pool {
                    runs.push(measure_rtf_parallel(pool, &examples, cfg.toy.frame_rate, 5, decode)?);
                }
                let mut pairs = Vec::with_capacity(examples.len());
                for (ex, u) in examples.iter().zip(eval) {
                    let s = m.greedy_decode(&ex.text, &ex.prompt, cap)?;
                    pairs.push((
                        invert_semantic(&cfg.toy, s.tokens()).text,
                        cfg.toy.text_from_str(&u.text)?.tokens().to_vec(),
                    ));
                }
                let nll = eval_nll(&m, &examples)?;
                let ter = corpus_token_error_rate(&pairs)?;
                for r in runs {
                    reports.push(BenchReport {
                        variant: serde_json::to_value(m.variant())?.as_str().unwrap_or("?").to_string(),
                        rtf: r.rtf,
                        nll: Some(nll),
                        ter: Some(ter),
                        speaker_accuracy: None,
                        forward_passes: None,
                        threads: r.threads,
                        config_hash: config_hash(m.config())?,
                    });
                }
            }
            if let Some(path) = speaker {
                let spk = load_speaker(&path)?;
                let prompt = prompt_from(&cfg.toy, &eval[0])?;
                let dc = cfg.decode_config(0);
                let mut passes = 0;
                let r = measure_rtf(eval, cfg.toy.frame_rate, 5, |u| {
                    let (grid, trace) =
                        g_ipd_decode_traced(&spk, &u.semantic_seq(), &prompt, &dc, CacheMode::Cached, false)?;
                    passes = trace.forward_passes;
                    Ok(grid.len())
                })?;
                reports.push(BenchReport {
                    variant: "speaker".into(),
                    rtf: r.rtf,
                    nll: None,
                    ter: None,
                    speaker_accuracy: None,
                    forward_passes: Some(passes),
                    threads: r.threads,
                    config_hash: config_hash(spk.config())?,
                });
            }
            for r in &reports {
                println!("{}", r.to_json_line()?);
            }
            print!("{}", BenchReport::table(&reports));
        }
    }
    Ok(())
}
