//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.
//!
//! The trained-model checks share three models trained once per process:
//! the ++ interpreter, the baseline interpreter and the acoustic generator.

mod common;

use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{binomial, enumerate_nll, fd_audit, levenshtein, parse_wav, report, tiny_interpreter, tiny_speaker};
use tokcascade::cli::checkpoint::{decode_tensors, encode_tensors, Checkpoint};
use tokcascade::evalbench::{eval_nll, measure_rtf};
use tokcascade::grvq::{fit_codebooks, synthetic_features};
use tokcascade::interpreting::lattice::forward_nll;
use tokcascade::interpreting::{
    paired_examples, train_interpreter, Example, InterpreterConfig, TransducerModel, Variant,
};
use tokcascade::numerics::{log_softmax, Graph, Tensor};
use tokcascade::speaking::{
    g_ipd_decode, g_ipd_decode_traced, prompt_from, speaker_recipe, train_speaker, CacheMode, DecodeConfig, GmlmInput,
    Level, MaskPattern, PromptSource, SpeakingConfig, SpeakingModel,
};
use tokcascade::tokens::{AcousticGrid, AcousticTokenFrame, SemanticSeq, TextSeq};
use tokcascade::toyworld::{
    classify_speaker, corpus_build, invert_semantic, render_waveform, write_wav, Corpus, ToySpec,
};
use tokcascade::training::TrainConfig;

const CORPUS_SEED: u64 = 11;

fn spec() -> ToySpec {
    ToySpec::default()
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| corpus_build(&spec(), 2000, 100, CORPUS_SEED).unwrap())
}

/// Both variants get the same steps, seeds and wall-clock budget.
/// A trained model and the wall time its training took.
struct Trained<M> {
    model: M,
    seconds: f64,
}

fn train_variant(variant: Variant) -> Trained<TransducerModel> {
    let mut model = TransducerModel::new(
        InterpreterConfig {
            variant,
            ..Default::default()
        },
        1,
    )
    .unwrap();
    let cfg = TrainConfig {
        steps: 3000,
        ..TrainConfig::default()
    };
    let rep = train_interpreter(&mut model, &spec(), &corpus().train, &cfg, 2, |_, _| {}).unwrap();
    eprintln!(
        "{variant:?}: {} steps in {:.0}s, loss {:.4}",
        rep.steps,
        rep.seconds,
        rep.tail_loss(20)
    );
    Trained {
        model,
        seconds: rep.seconds,
    }
}

fn interpreter_pp() -> &'static Trained<TransducerModel> {
    static M: OnceLock<Trained<TransducerModel>> = OnceLock::new();
    M.get_or_init(|| train_variant(Variant::PlusPlus))
}

fn interpreter_baseline() -> &'static Trained<TransducerModel> {
    static M: OnceLock<Trained<TransducerModel>> = OnceLock::new();
    M.get_or_init(|| train_variant(Variant::Baseline))
}

fn speaker() -> &'static Trained<SpeakingModel> {
    static M: OnceLock<Trained<SpeakingModel>> = OnceLock::new();
    M.get_or_init(|| {
        let mut model = SpeakingModel::new(SpeakingConfig::default(), 1).unwrap();
        let rep = train_speaker(&mut model, &spec(), &corpus().train, &speaker_recipe(), 2, |_, _| {}).unwrap();
        eprintln!(
            "speaker: {} steps in {:.0}s, loss {:.4}",
            rep.steps,
            rep.seconds,
            rep.tail_loss(20)
        );
        Trained {
            model,
            seconds: rep.seconds,
        }
    })
}

fn random_log_probs(rows: usize, vocab: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..rows)
        .flat_map(|_| {
            let logits: Vec<f64> = (0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect();
            log_softmax(&logits)
        })
        .collect()
}

fn dp_nll(table: Vec<f64>, frames: usize, target: &[usize], vocab: usize) -> f64 {
    let mut g = Graph::new();
    let rows = table.len() / vocab;
    let node = g.constant(Tensor::matrix(rows, vocab, table).unwrap());
    let loss = forward_nll(&mut g, node, 0, frames, target, vocab).unwrap();
    g.value(loss).item().unwrap()
}

#[test]
fn criterion_01_lattice_matches_path_enumeration() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut count) = (0.0f64, 0);
    for _ in 0..400 {
        let n = rng.random_range(1..=4);
        let t = rng.random_range(0..=3);
        let k_s = rng.random_range(1..=5);
        let vocab = k_s + 1;
        let target: Vec<usize> = (0..t).map(|_| rng.random_range(0..k_s)).collect();
        let table = random_log_probs(n * (t + 1), vocab, &mut rng);
        let oracle = enumerate_nll(&table, n, &target, vocab);
        let dp = dp_nll(table, n, &target, vocab);
        worst = worst.max((dp - oracle).abs() / oracle.abs());
        count += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 10.0;
    report(
        "criterion 1 lattice oracle",
        pass,
        &format!("{count} instances, max rel err {worst:.2e}, {secs:.2}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_uniform_closed_form() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for vocab in [2usize, 3, 6] {
        for n in 1..=5u64 {
            for t in 0..=4u64 {
                let target: Vec<usize> = (0..t as usize).map(|i| i % (vocab - 1)).collect();
                let table = vec![-(vocab as f64).ln(); n as usize * (t as usize + 1) * vocab];
                let dp = dp_nll(table, n as usize, &target, vocab);
                let expected = -(binomial(n + t - 1, t).ln() - (n + t) as f64 * (vocab as f64).ln());
                worst = worst.max((dp - expected).abs() / expected.abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst <= 1e-9 && secs < 1.0;
    report(
        "criterion 2 closed form",
        pass,
        &format!("max rel err {worst:.2e}, {secs:.3}s"),
    );
    assert!(pass);
}

fn interpreter_examples(k_s: usize, rng: &mut impl Rng) -> Vec<Example> {
    (0..2)
        .map(|_| {
            let n = rng.random_range(2..=4);
            let t = rng.random_range(1..=3);
            Example {
                text: TextSeq::new((0..n).map(|_| rng.random_range(0..4)).collect(), 4).unwrap(),
                target: SemanticSeq::new((0..t).map(|_| rng.random_range(0..k_s)).collect(), k_s).unwrap(),
                prompt: SemanticSeq::new((0..5).map(|_| rng.random_range(0..k_s)).collect(), k_s).unwrap(),
            }
        })
        .collect()
}

fn speaker_batch(
    rng: &mut impl Rng,
) -> Vec<(
    SemanticSeq,
    AcousticGrid,
    MaskPattern,
    tokcascade::speaking::AcousticPrompt,
)> {
    let grid = |len: usize, rng: &mut dyn rand::RngCore| {
        AcousticGrid::new(
            (0..len)
                .map(|_| AcousticTokenFrame {
                    codes: [
                        [rng.random_range(0..5), rng.random_range(0..5)],
                        [rng.random_range(0..5), rng.random_range(0..5)],
                    ],
                })
                .collect(),
        )
    };
    (0..2)
        .map(|i| {
            let len = 4 + i;
            let s = SemanticSeq::new((0..len).map(|_| rng.random_range(0..4)).collect(), 4).unwrap();
            let mut mask = MaskPattern::none(len);
            for t in 0..len {
                mask.set(t, Level::Coarse, t % 2 == i);
                mask.set(t, Level::Fine, t % 3 != 0);
            }
            let p_sem = SemanticSeq::new((0..3).map(|_| rng.random_range(0..4)).collect(), 4).unwrap();
            let prompt = tokcascade::speaking::AcousticPrompt::new(p_sem, grid(3, rng)).unwrap();
            (s, grid(len, rng), mask, prompt)
        })
        .collect()
}

#[test]
fn criterion_03_gradient_audit() {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    for variant in [Variant::PlusPlus, Variant::Baseline] {
        let mut model = tiny_interpreter(variant, 3, 7);
        let examples = interpreter_examples(3, &mut rng);
        let loss_of =
            |m: &TransducerModel, g: &mut Graph| m.batch_loss(g, &examples.iter().collect::<Vec<_>>()).unwrap();
        let mut g = Graph::new();
        let loss = loss_of(&model, &mut g);
        let grads = g.backward(loss).unwrap().for_store(model.store());
        let audit = fd_audit(&mut model, &grads, |m| {
            let mut g = Graph::new();
            let l = loss_of(m, &mut g);
            g.value(l).item().unwrap()
        });
        pass &= audit.max_rel <= 1e-4;
        lines.push(format!(
            "{variant:?} {} scalars max rel {:.1e}",
            audit.checked, audit.max_rel
        ));
        if audit.max_rel > 1e-4 {
            lines.push(format!("worst {}", audit.worst));
        }
    }

    let mut model = tiny_speaker(9);
    let batch = speaker_batch(&mut rng);
    let loss_of = |m: &SpeakingModel, g: &mut Graph| {
        let inputs: Vec<GmlmInput<'_>> = batch
            .iter()
            .map(|(s, y, mask, _)| GmlmInput {
                semantic: s,
                tokens: y,
                mask,
            })
            .collect();
        let prompts: Vec<_> = batch.iter().map(|b| &b.3).collect();
        let (logits, spans) = m.forward_batch(g, &inputs, PromptSource::Recompute(&prompts)).unwrap();
        let terms: Vec<_> = batch
            .iter()
            .zip(spans)
            .map(|((_, y, mask, _), rows)| m.gmlm_loss_node(g, logits, rows, y, mask).unwrap().normalized(g))
            .collect();
        g.sum(&terms).unwrap()
    };
    let mut g = Graph::new();
    let loss = loss_of(&model, &mut g);
    let grads = g.backward(loss).unwrap().for_store(model.store());
    let audit = fd_audit(&mut model, &grads, |m| {
        let mut g = Graph::new();
        let l = loss_of(m, &mut g);
        g.value(l).item().unwrap()
    });
    pass &= audit.max_rel <= 1e-4;
    lines.push(format!(
        "speaker {} scalars max rel {:.1e}",
        audit.checked, audit.max_rel
    ));
    if audit.max_rel > 1e-4 {
        lines.push(format!("worst {}", audit.worst));
    }

    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(
        "criterion 3 gradient audit",
        pass,
        &format!("{}; {secs:.1}s", lines.join("; ")),
    );
    assert!(pass);
}

#[test]
fn criterion_04_capped_mass_sums_to_one() {
    let cap = 2;
    let frames = 2;
    let mut worst = 0.0f64;
    for (seed, variant) in [(1, Variant::PlusPlus), (2, Variant::Baseline), (3, Variant::PlusPlus)] {
        let model = tiny_interpreter(variant, 2, seed);
        let text = TextSeq::new(vec![1, 3], 4).unwrap();
        let prompt = SemanticSeq::new(vec![0, 1, 1], 2).unwrap();
        let mut mass = 0.0;
        for len in 0..=frames * cap {
            for bits in 0..1usize << len {
                let target = SemanticSeq::new((0..len).map(|i| bits >> i & 1).collect(), 2).unwrap();
                let ex = Example {
                    text: text.clone(),
                    target,
                    prompt: prompt.clone(),
                };
                mass += (-model.capped_nll(&ex, cap).unwrap()).exp();
            }
        }
        worst = worst.max((mass - 1.0).abs());
    }
    let pass = worst <= 1e-9;
    report(
        "criterion 4 probability mass",
        pass,
        &format!("max |Σp − 1| = {worst:.2e} over 3 models, cap {cap}"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_zero_shot_intelligibility() {
    let spec = spec();
    let trained = interpreter_pp();
    let model = &trained.model;
    let eval = paired_examples(&spec, &corpus().eval, 3).unwrap();
    let (mut edits, mut total) = (0, 0);
    for (ex, utt) in eval.iter().zip(&corpus().eval) {
        let s = model
            .greedy_decode(&ex.text, &ex.prompt, model.config().max_symbols_per_frame)
            .unwrap();
        let hyp = invert_semantic(&spec, s.tokens()).text;
        let reference = spec.text_from_str(&utt.text).unwrap();
        edits += levenshtein(&hyp, reference.tokens());
        total += reference.len();
    }
    let ter = edits as f64 / total as f64;
    let pass = ter <= 0.02 && trained.seconds <= 600.0;
    report(
        "criterion 5 held-out TER",
        pass,
        &format!(
            "TER {ter:.4} on {} unseen-style utterances, trained in {:.0}s",
            eval.len(),
            trained.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_speaker_similarity() {
    let spec = spec();
    let trained = speaker();
    let model = &trained.model;
    let eval = &corpus().eval;
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut hits = 0;
    for (i, u) in eval.iter().enumerate() {
        let j = loop {
            let j = rng.random_range(0..eval.len());
            if j != i {
                break j;
            }
        };
        let prompt = prompt_from(&spec, &eval[j]).unwrap();
        let cfg = DecodeConfig {
            seed: i as u64,
            ..Default::default()
        };
        let grid = g_ipd_decode(model, &u.semantic_seq(), &prompt, &cfg).unwrap();
        if classify_speaker(&spec, &u.semantic, &grid).unwrap() == Some(eval[j].sigma) {
            hits += 1;
        }
    }
    let acc = hits as f64 / eval.len() as f64;
    let pass = acc >= 0.95 && trained.seconds <= 900.0;
    report(
        "criterion 6 speaker similarity",
        pass,
        &format!(
            "accuracy {acc:.3} over {}, trained in {:.0}s",
            eval.len(),
            trained.seconds
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_07_disentanglement() {
    let spec = spec();
    let interp = &interpreter_pp().model;
    let gen = &speaker().model;
    let eval = &corpus().eval;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let (mut speaker_hits, mut length_hits) = (0, 0);
    for (i, u) in eval.iter().enumerate() {
        let js = rng.random_range(0..eval.len());
        // acoustic prompt from a different utterance and a different speaker
        let ja = loop {
            let j = rng.random_range(0..eval.len());
            if j != js && eval[j].sigma != eval[js].sigma {
                break j;
            }
        };
        let (p_s, p_a) = (&eval[js], &eval[ja]);
        let x = spec.text_from_str(&u.text).unwrap();
        let s = interp
            .greedy_decode(&x, &p_s.semantic_seq(), interp.config().max_symbols_per_frame)
            .unwrap();
        let expected_len = (p_s.r * x.len()) as f64;
        if (s.len() as f64 - expected_len).abs() <= 0.1 * expected_len {
            length_hits += 1;
        }
        if s.is_empty() {
            continue;
        }
        let cfg = DecodeConfig {
            seed: 1000 + i as u64,
            ..Default::default()
        };
        let grid = g_ipd_decode(gen, &s, &prompt_from(&spec, p_a).unwrap(), &cfg).unwrap();
        if classify_speaker(&spec, s.tokens(), &grid).unwrap() == Some(p_a.sigma) {
            speaker_hits += 1;
        }
    }
    let n = eval.len() as f64;
    let (spk, len) = (speaker_hits as f64 / n, length_hits as f64 / n);
    let pass = spk >= 0.95 && len >= 0.90;
    report(
        "criterion 7 disentanglement",
        pass,
        &format!("speaker match {spk:.3}, length within 10% {len:.3}"),
    );
    assert!(pass);
}

#[test]
fn criterion_08_g_ipd_structure() {
    let spec = spec();
    let model = SpeakingModel::new(SpeakingConfig::default(), 21).unwrap();
    let eval = &corpus().eval;
    let n_c = 16;
    let mut failures = Vec::new();
    for run in 0..100u64 {
        let u = &eval[run as usize % eval.len()];
        let prompt = prompt_from(&spec, &eval[(run as usize + 1) % eval.len()]).unwrap();
        // include sequences shorter than the iteration count
        let s = if run % 10 == 0 {
            SemanticSeq::from_raw(u.semantic[..5.min(u.len())].to_vec())
        } else {
            u.semantic_seq()
        };
        let cfg = DecodeConfig {
            n_c,
            temperature: 1.0,
            seed: run,
        };
        let (grid, trace) = g_ipd_decode_traced(&model, &s, &prompt, &cfg, CacheMode::Cached, false).unwrap();
        let len = s.len();
        let mut ok = trace.forward_passes == n_c + 1 && trace.masks.len() == n_c + 1 && trace.inputs.len() == n_c + 1;
        // strictly decreasing until everything is committed
        let mut prev = trace.masks[0].count(Level::Coarse);
        ok &= prev == len;
        for &c in &trace.coarse_masked {
            ok &= if prev > 0 { c < prev } else { c == 0 };
            prev = c;
        }
        ok &= prev == 0;
        for (n, mask) in trace.masks.iter().enumerate() {
            for t in 0..len {
                for d in 0..2 {
                    ok &= mask.is_masked(t, 0, d) == mask.is_masked(t, 1, d);
                }
                if n < n_c {
                    ok &= mask.is_masked(t, 0, 1);
                }
                // a visible coarse token must already hold its final value
                if !mask.is_masked(t, 0, 0) {
                    for gi in 0..2 {
                        ok &= trace.inputs[n].frame(t).code(gi, 0) == grid.frame(t).code(gi, 0);
                    }
                }
                if n > 0 && !trace.masks[n - 1].is_masked(t, 0, 0) {
                    ok &= !mask.is_masked(t, 0, 0);
                }
            }
        }
        let mut committed: Vec<usize> = trace.commits.iter().flatten().copied().collect();
        committed.sort_unstable();
        ok &= committed == (0..len).collect::<Vec<_>>();
        if !ok {
            failures.push(run);
        }
    }
    let pass = failures.is_empty();
    report(
        "criterion 8 G-IPD structure",
        pass,
        &format!("100 decodes, N_c {n_c}, {} passes each, failures {failures:?}", n_c + 1),
    );
    assert!(pass);
}

#[test]
fn criterion_09_cache_equivalence() {
    let spec = spec();
    let model = SpeakingModel::new(SpeakingConfig::default(), 33).unwrap();
    let eval = &corpus().eval;
    let (mut same_tokens, mut worst) = (0, 0.0f64);
    for run in 0..50u64 {
        let u = &eval[run as usize];
        let prompt = prompt_from(&spec, &eval[(run as usize + 7) % eval.len()]).unwrap();
        let cfg = DecodeConfig {
            n_c: 8,
            temperature: 1.0,
            seed: run,
        };
        let (a, ta) = g_ipd_decode_traced(&model, &u.semantic_seq(), &prompt, &cfg, CacheMode::Cached, true).unwrap();
        let (b, tb) =
            g_ipd_decode_traced(&model, &u.semantic_seq(), &prompt, &cfg, CacheMode::Recompute, true).unwrap();
        if a == b {
            same_tokens += 1;
        }
        for (la, lb) in ta.logits.iter().zip(&tb.logits) {
            worst = worst.max(la.max_abs_diff(lb));
        }
    }
    let pass = same_tokens == 50 && worst <= 1e-6;
    report(
        "criterion 9 cache equivalence",
        pass,
        &format!("{same_tokens}/50 identical, max logit diff {worst:.2e}"),
    );
    assert!(pass);
}

#[test]
fn criterion_10_rtf_and_nll_ordering() {
    let spec = spec();
    let eval = &corpus().eval;
    let examples = paired_examples(&spec, eval, 3).unwrap();
    let measure = |m: &TransducerModel| {
        measure_rtf(&examples, spec.frame_rate, 5, |ex| {
            Ok(m.greedy_decode(&ex.text, &ex.prompt, m.config().max_symbols_per_frame)?
                .len())
        })
        .unwrap()
    };
    let (pp, base) = (&interpreter_pp().model, &interpreter_baseline().model);
    let (rtf_pp, rtf_base) = (measure(pp), measure(base));
    let (nll_pp, nll_base) = (eval_nll(pp, &examples).unwrap(), eval_nll(base, &examples).unwrap());
    let pass = rtf_pp.rtf > rtf_base.rtf && nll_pp <= nll_base && examples.len() >= 50;
    report(
        "criterion 10 RTF and NLL ordering",
        pass,
        &format!(
            "{} utterances; RTF ++ {:.1} vs baseline {:.1} (median of 5); NLL ++ {nll_pp:.4} vs baseline {nll_base:.4}",
            examples.len(),
            rtf_pp.rtf,
            rtf_base.rtf
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_grvq_properties() {
    let features = synthetic_features(10_000, 16, 24, 1111);
    let books = fit_codebooks(&features, 2, 2, 64, 5).unwrap();
    let mse = books.mse_by_depth(&features).unwrap();
    let mut monotone = mse.windows(2).all(|w| w[1] <= w[0]);
    // frame by frame as well
    for x in features.iter().take(2000) {
        let codes = books.encode(x).unwrap();
        let err = |levels| {
            let rec = books.decode_levels(&codes, levels).unwrap();
            x.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        };
        monotone &= err(2) <= err(1);
    }
    let encode_det = features
        .iter()
        .take(500)
        .all(|x| books.encode(x).unwrap() == books.encode(x).unwrap());
    let fit_det = fit_codebooks(&features, 2, 2, 64, 5).unwrap() == books;
    let pass = monotone && encode_det && fit_det;
    report(
        "criterion 11 G-RVQ",
        pass,
        &format!("MSE by depth {mse:.4?}; monotone {monotone}, encode deterministic {encode_det}, fit deterministic {fit_det}"),
    );
    assert!(pass);
}

#[test]
fn criterion_12_formats() {
    let dir = tempfile::tempdir().unwrap();
    let features = synthetic_features(500, 8, 4, 3);
    let ck = Checkpoint {
        interpreter: Some(tiny_interpreter(Variant::Baseline, 3, 4)),
        speaker: Some(tiny_speaker(5)),
        codebooks: Some(fit_codebooks(&features, 2, 2, 8, u64::MAX - 12).unwrap()),
    };
    let path = dir.path().join("model.tkc");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let bits = |entries: Vec<(String, Tensor)>| -> Vec<(String, Vec<usize>, Vec<u64>)> {
        entries
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.data().iter().map(|v| v.to_bits()).collect()))
            .collect()
    };
    let round_trip = bits(ck.to_tensors()) == bits(back.to_tensors()) && back.codebooks == ck.codebooks;
    let bytes = std::fs::read(&path).unwrap();
    let resaved = encode_tensors(&back.to_tensors()).unwrap() == bytes;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut crc_rejected = true;
    for _ in 0..50 {
        let mut damaged = bytes.clone();
        let at = rng.random_range(12..bytes.len());
        damaged[at] ^= 1 << rng.random_range(0..8);
        crc_rejected &= decode_tensors(&damaged).is_err();
    }
    let mut payload = bytes.clone();
    let last = payload.len() - 5;
    payload[last] ^= 0x10;
    crc_rejected &= matches!(decode_tensors(&payload), Err(tokcascade::Error::Corruption(_)));

    let spec = spec();
    let mut wav_ok = true;
    for u in corpus().eval.iter().take(5) {
        let wav = dir.path().join(format!("{}.wav", u.id));
        write_wav(&spec, &wav, &render_waveform(&spec, &u.grid())).unwrap();
        let header = parse_wav(&std::fs::read(&wav).unwrap());
        wav_ok &= header
            == Some(common::WavHeader {
                channels: 1,
                sample_rate: 16_000,
                bits: 16,
                format: 1,
                samples: 320 * u.len(),
            });
    }
    let pass = round_trip && resaved && crc_rejected && wav_ok;
    report(
        "criterion 12 formats",
        pass,
        &format!("bit-identical round trip {round_trip}, stable bytes {resaved}, damage rejected {crc_rejected}, WAV {wav_ok}"),
    );
    assert!(pass);
}
