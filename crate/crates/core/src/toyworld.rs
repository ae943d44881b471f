//! Synthetic speech-token corpus with exact inverse oracles.
//!
//! Text is a string over a small phoneme alphabet (`a`, `b`, ...). Every
//! phoneme becomes `rate` copies of the semantic token `4·phoneme + pitch`;
//! acoustic tokens are a fixed per-speaker function of the semantic stream
//! and the frame index, so speaker, rate, pitch and text are all exactly
//! recoverable from the generated tokens.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::tokens::{AcousticGrid, SemanticSeq, TextSeq, GROUPS};

/// Offset added to the group-1 coarse stream.
pub const GROUP1_OFFSET: usize = 17;
/// Audio samples rendered per acoustic frame (20 ms at 16 kHz).
pub const SAMPLES_PER_FRAME: usize = 320;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpec {
    pub phonemes: usize,
    pub pitch_classes: usize,
    pub rates: Vec<usize>,
    pub speakers: usize,
    pub codebook_size: usize,
    pub frame_rate: f64,
    pub sample_rate: u32,
    pub min_text_len: usize,
    pub max_text_len: usize,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            phonemes: 16,
            pitch_classes: 4,
            rates: vec![1, 2, 3],
            speakers: 8,
            codebook_size: 64,
            frame_rate: 50.0,
            sample_rate: 16_000,
            min_text_len: 2,
            max_text_len: 12,
        }
    }
}

impl ToySpec {
    pub fn semantic_vocab(&self) -> usize {
        self.phonemes * self.pitch_classes
    }

    /// Spacing between speaker offsets in the coarse streams.
    pub fn speaker_stride(&self) -> usize {
        self.codebook_size / self.speakers
    }

    pub fn validate(&self) -> Result<()> {
        if self.phonemes == 0 || self.phonemes > 26 {
            bail!(Config, "phonemes must be in 1..=26");
        }
        if self.pitch_classes == 0 || self.speakers == 0 || self.rates.is_empty() || self.rates.contains(&0) {
            bail!(Config, "pitch classes, speakers and rates must be positive");
        }
        if !self.codebook_size.is_multiple_of(self.speakers) || self.codebook_size < self.semantic_vocab() {
            bail!(
                Config,
                "codebook size {} must be a multiple of {} speakers and cover {} semantic ids",
                self.codebook_size,
                self.speakers,
                self.semantic_vocab()
            );
        }
        if self.min_text_len == 0 || self.min_text_len > self.max_text_len {
            bail!(Config, "bad text length range");
        }
        if self.frame_rate <= 0.0 || self.sample_rate == 0 {
            bail!(Config, "rates must be positive");
        }
        Ok(())
    }

    pub fn text_from_str(&self, text: &str) -> Result<TextSeq> {
        let ids = text
            .chars()
            .map(|c| {
                let idx = (c as usize).wrapping_sub('a' as usize);
                if c.is_ascii_lowercase() && idx < self.phonemes {
                    Ok(idx)
                } else {
                    bail!(Input, "invalid phoneme {c:?}")
                }
            })
            .collect::<Result<Vec<_>>>()?;
        TextSeq::new(ids, self.phonemes)
    }

    pub fn text_to_string(&self, text: &[usize]) -> String {
        text.iter().map(|&i| (b'a' + i as u8) as char).collect()
    }
}

/// One synthetic utterance with its full token streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
    pub r: usize,
    pub p: usize,
    pub sigma: usize,
    pub semantic: Vec<usize>,
    /// `acoustic[group][depth][t]`.
    pub acoustic: [[Vec<usize>; 2]; 2],
    pub seed: u64,
}

impl Utterance {
    pub fn semantic_seq(&self) -> SemanticSeq {
        SemanticSeq::from_raw(self.semantic.clone())
    }

    pub fn grid(&self) -> AcousticGrid {
        AcousticGrid::from_streams(&self.acoustic).expect("utterance streams are aligned")
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    pub fn style(&self) -> Style {
        Style {
            r: self.r,
            p: self.p,
            sigma: self.sigma,
        }
    }
}

/// `(rate, pitch, speaker)` combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Style {
    pub r: usize,
    pub p: usize,
    pub sigma: usize,
}

/// Semantic stream of `text` at rate `r` and pitch `p`.
pub fn semantic_tokens(spec: &ToySpec, text: &[usize], r: usize, p: usize) -> Vec<usize> {
    text.iter()
        .flat_map(|&c| std::iter::repeat_n(spec.pitch_classes * c + p, r))
        .collect()
}

/// Acoustic streams for a semantic sequence spoken by `sigma`.
pub fn acoustic_tokens(spec: &ToySpec, semantic: &[usize], sigma: usize) -> [[Vec<usize>; 2]; 2] {
    let k = spec.codebook_size;
    let off = spec.speaker_stride() * sigma;
    let coarse0 = semantic.iter().map(|&s| (s + off) % k).collect();
    let coarse1 = semantic.iter().map(|&s| (s + off + GROUP1_OFFSET) % k).collect();
    let fine0 = semantic.iter().enumerate().map(|(t, &s)| (s + t) % k).collect();
    let fine1 = semantic.iter().enumerate().map(|(t, &s)| (s + 2 * t) % k).collect();
    [[coarse0, fine0], [coarse1, fine1]]
}

pub fn generate_utterance(
    spec: &ToySpec,
    text: &str,
    r: usize,
    p: usize,
    sigma: usize,
    seed: u64,
) -> Result<Utterance> {
    let ids = spec.text_from_str(text)?;
    if !spec.rates.contains(&r) || p >= spec.pitch_classes || sigma >= spec.speakers {
        bail!(Input, "style (r={r}, p={p}, sigma={sigma}) out of range");
    }
    let semantic = semantic_tokens(spec, ids.tokens(), r, p);
    let acoustic = acoustic_tokens(spec, &semantic, sigma);
    Ok(Utterance {
        id: format!("utt-{seed:016x}"),
        text: text.to_string(),
        r,
        p,
        sigma,
        semantic,
        acoustic,
        seed,
    })
}

/// Train/eval split of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<Utterance>,
    pub eval: Vec<Utterance>,
}

/// Styles held out of training: roughly a fifth of all combinations, chosen so
/// every rate, pitch and speaker still occurs in training on its own.
pub fn is_held_out(style: Style) -> bool {
    (style.r + 2 * style.p + 3 * style.sigma).is_multiple_of(5)
}

pub fn all_styles(spec: &ToySpec) -> Vec<Style> {
    let mut out = Vec::new();
    for &r in &spec.rates {
        for p in 0..spec.pitch_classes {
            for sigma in 0..spec.speakers {
                out.push(Style { r, p, sigma });
            }
        }
    }
    out
}

/// Random text with no phoneme repeated back-to-back, so runs in the
/// semantic stream map one-to-one onto phonemes.
pub fn random_text(spec: &ToySpec, rng: &mut impl Rng) -> String {
    let len = rng.random_range(spec.min_text_len..=spec.max_text_len);
    let mut ids: Vec<usize> = Vec::with_capacity(len);
    while ids.len() < len {
        let c = rng.random_range(0..spec.phonemes);
        if ids.last() != Some(&c) || spec.phonemes == 1 {
            ids.push(c);
        }
    }
    spec.text_to_string(&ids)
}

pub fn corpus_build(spec: &ToySpec, n_train: usize, n_eval: usize, seed: u64) -> Result<Corpus> {
    spec.validate()?;
    if n_train == 0 || n_eval == 0 {
        bail!(Input, "corpus sizes must be at least 1");
    }
    let (held, seen): (Vec<Style>, Vec<Style>) = all_styles(spec).into_iter().partition(|s| is_held_out(*s));
    if held.is_empty() || seen.is_empty() {
        bail!(Config, "toy spec too small for a held-out split");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let make = |styles: &[Style], n: usize, tag: &str, rng: &mut ChaCha8Rng| -> Result<Vec<Utterance>> {
        (0..n)
            .map(|i| {
                let style = *styles.choose(rng).expect("nonempty");
                let text = random_text(spec, rng);
                let utt_seed = rng.random::<u64>();
                let mut u = generate_utterance(spec, &text, style.r, style.p, style.sigma, utt_seed)?;
                u.id = format!("{tag}-{i:06}");
                Ok(u)
            })
            .collect()
    };
    let train = make(&seen, n_train, "train", &mut rng)?;
    let eval = make(&held, n_eval, "eval", &mut rng)?;
    Ok(Corpus { train, eval })
}

pub fn write_manifest(path: &Path, utterances: &[Utterance]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for u in utterances {
        serde_json::to_writer(&mut w, u)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<Utterance>> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub const TRAIN_MANIFEST: &str = "train.jsonl";
pub const EVAL_MANIFEST: &str = "eval.jsonl";

impl Corpus {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        write_manifest(&dir.join(TRAIN_MANIFEST), &self.train)?;
        write_manifest(&dir.join(EVAL_MANIFEST), &self.eval)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(Self {
            train: read_manifest(&dir.join(TRAIN_MANIFEST))?,
            eval: read_manifest(&dir.join(EVAL_MANIFEST))?,
        })
    }
}

/// Result of inverting a semantic stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Inversion {
    pub text: Vec<usize>,
    pub rate: Option<usize>,
    pub pitch: Option<usize>,
}

/// Recovers text, rate and pitch: runs collapse to one phoneme each, the rate
/// is the median run length (ties rounded to even), the pitch a majority vote.
pub fn invert_semantic(spec: &ToySpec, s: &[usize]) -> Inversion {
    if s.is_empty() {
        return Inversion {
            text: Vec::new(),
            rate: None,
            pitch: None,
        };
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for &tok in s {
        match runs.last_mut() {
            Some((t, n)) if *t == tok => *n += 1,
            _ => runs.push((tok, 1)),
        }
    }
    let text = runs.iter().map(|(t, _)| t / spec.pitch_classes).collect();
    let mut lens: Vec<usize> = runs.iter().map(|(_, n)| *n).collect();
    lens.sort_unstable();
    let mid = lens.len() / 2;
    let median = if lens.len() % 2 == 1 {
        lens[mid] as f64
    } else {
        (lens[mid - 1] + lens[mid]) as f64 / 2.0
    };
    let rate = median.round_ties_even() as usize;

    let mut votes = vec![0usize; spec.pitch_classes];
    for &tok in s {
        votes[tok % spec.pitch_classes] += 1;
    }
    let best = votes.iter().copied().max().unwrap_or(0);
    let pitch = votes.iter().position(|&v| v == best);
    Inversion {
        text,
        rate: Some(rate),
        pitch,
    }
}

/// Speaker decoded from the coarse streams, or `None` when no speaker wins at
/// least half of the frames.
pub fn classify_speaker(spec: &ToySpec, s: &[usize], grid: &AcousticGrid) -> Result<Option<usize>> {
    if s.len() != grid.len() {
        bail!(Input, "semantic length {} vs grid length {}", s.len(), grid.len());
    }
    if s.is_empty() {
        return Ok(None);
    }
    let k = spec.codebook_size;
    let stride = spec.speaker_stride();
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for (t, &sem) in s.iter().enumerate() {
        let frame = grid.frame(t);
        let d0 = (frame.code(0, 0) + k - sem % k) % k;
        if !d0.is_multiple_of(stride) {
            continue;
        }
        let sigma = d0 / stride;
        let d1 = (frame.code(1, 0) + 2 * k - sem % k - GROUP1_OFFSET % k) % k;
        if d1 == d0 {
            *votes.entry(sigma).or_default() += 1;
        }
    }
    let Some((&sigma, &count)) = votes
        .iter()
        .max_by_key(|(sigma, count)| (**count, std::cmp::Reverse(**sigma)))
    else {
        return Ok(None);
    };
    Ok((2 * count >= s.len()).then_some(sigma))
}

/// Two phase-continuous sinusoids per frame, one per group, at
/// `100 + 5·code` Hz where `code` is the group's coarse token.
pub fn render_waveform(spec: &ToySpec, grid: &AcousticGrid) -> Vec<f32> {
    let sr = spec.sample_rate as f64;
    let mut phase = [0.0f64; GROUPS];
    let mut out = Vec::with_capacity(grid.len() * SAMPLES_PER_FRAME);
    for t in 0..grid.len() {
        let frame = grid.frame(t);
        let freqs: Vec<f64> = (0..GROUPS).map(|i| 100.0 + 5.0 * frame.code(i, 0) as f64).collect();
        for _ in 0..SAMPLES_PER_FRAME {
            let v: f64 = phase.iter().map(|ph| 0.25 * ph.sin()).sum();
            out.push(v as f32);
            for (ph, f) in phase.iter_mut().zip(&freqs) {
                *ph = (*ph + 2.0 * PI * f / sr) % (2.0 * PI);
            }
        }
    }
    out
}

/// Writes 16-bit mono PCM at the spec's sample rate.
pub fn write_wav(spec: &ToySpec, path: &Path, samples: &[f32]) -> Result<()> {
    let wav_spec = hound::WavSpec {
        channels: 1,
        sample_rate: spec.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let io_err = |e: hound::Error| crate::Error::Io(std::io::Error::other(e.to_string()));
    let mut w = hound::WavWriter::create(path, wav_spec).map_err(io_err)?;
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
        w.write_sample(v).map_err(io_err)?;
    }
    w.finalize().map_err(io_err)?;
    Ok(())
}

/// Index of utterances by style, for prompt lookup.
pub fn group_by<K: Ord>(utterances: &[Utterance], key: impl Fn(&Utterance) -> K) -> BTreeMap<K, Vec<usize>> {
    let mut out: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, u) in utterances.iter().enumerate() {
        out.entry(key(u)).or_default().push(i);
    }
    out
}

pub fn styles_of(utterances: &[Utterance]) -> BTreeSet<Style> {
    utterances.iter().map(Utterance::style).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ToySpec {
        ToySpec::default()
    }

    #[test]
    fn semantic_formula() {
        let u = generate_utterance(&spec(), "ab", 2, 1, 0, 0).unwrap();
        assert_eq!(u.semantic, vec![1, 1, 5, 5]);
    }

    #[test]
    fn coarse_formula_for_speaker_two() {
        let u = generate_utterance(&spec(), "ab", 2, 1, 2, 0).unwrap();
        assert_eq!(u.acoustic[0][0], vec![17, 17, 21, 21]);
        assert_eq!(u.acoustic[1][0], vec![34, 34, 38, 38]);
        assert_eq!(u.acoustic[0][1], vec![1, 2, 7, 8]);
        assert_eq!(u.acoustic[1][1], vec![1, 3, 9, 11]);
    }

    #[test]
    fn base_case() {
        let u = generate_utterance(&spec(), "a", 1, 0, 0, 0).unwrap();
        assert_eq!(u.semantic, vec![0]);
        assert_eq!((u.acoustic[0][0][0], u.acoustic[1][0][0]), (0, 17));
        assert_eq!((u.acoustic[0][1][0], u.acoustic[1][1][0]), (0, 0));
    }

    #[test]
    fn invalid_phoneme_rejected() {
        assert!(matches!(
            generate_utterance(&spec(), "aZ", 1, 0, 0, 0),
            Err(crate::Error::Input(_))
        ));
        assert!(matches!(
            generate_utterance(&spec(), "aq", 1, 0, 0, 0),
            Err(crate::Error::Input(_))
        ));
        assert!(generate_utterance(&spec(), "ab", 4, 0, 0, 0).is_err());
    }

    #[test]
    fn inversion_examples() {
        let s = spec();
        let inv = invert_semantic(&s, &[1, 1, 5, 5]);
        assert_eq!(
            (s.text_to_string(&inv.text), inv.rate, inv.pitch),
            ("ab".into(), Some(2), Some(1))
        );
        let empty = invert_semantic(&s, &[]);
        assert!(empty.text.is_empty() && empty.rate.is_none() && empty.pitch.is_none());
        let ragged = invert_semantic(&s, &[1, 1, 1, 5, 5]);
        assert_eq!((s.text_to_string(&ragged.text), ragged.rate), ("ab".into(), Some(2)));
    }

    #[test]
    fn speaker_classification() {
        let s = spec();
        let u = generate_utterance(&s, "abcab", 2, 3, 5, 0).unwrap();
        assert_eq!(classify_speaker(&s, &u.semantic, &u.grid()).unwrap(), Some(5));
        let one = generate_utterance(&s, "c", 1, 2, 6, 0).unwrap();
        assert_eq!(classify_speaker(&s, &one.semantic, &one.grid()).unwrap(), Some(6));
        assert!(classify_speaker(&s, &u.semantic[..3], &u.grid()).is_err());
    }

    #[test]
    fn random_grids_are_rejected() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut accepted = 0;
        for _ in 0..500 {
            let u = generate_utterance(&s, &random_text(&s, &mut rng), 2, 1, 0, 0).unwrap();
            let mut streams = u.acoustic.clone();
            for g in streams.iter_mut() {
                for d in g.iter_mut() {
                    d.iter_mut().for_each(|v| *v = rng.random_range(0..64));
                }
            }
            let grid = AcousticGrid::from_streams(&streams).unwrap();
            if classify_speaker(&s, &u.semantic, &grid).unwrap().is_some() {
                accepted += 1;
            }
        }
        assert!(accepted < 10, "{accepted} random grids accepted");
    }

    #[test]
    fn waveform_shape_and_bounds() {
        let s = spec();
        let u = generate_utterance(&s, "abc", 1, 0, 0, 0).unwrap();
        let w = render_waveform(&s, &u.grid());
        assert_eq!(w.len(), 3 * SAMPLES_PER_FRAME);
        assert!(w.iter().all(|v| v.abs() <= 0.5));
    }

    #[test]
    fn zero_tokens_render_two_100hz_tones() {
        let s = spec();
        let grid = AcousticGrid::from_streams(&[[vec![0; 2], vec![0; 2]], [vec![0; 2], vec![0; 2]]]).unwrap();
        let w = render_waveform(&s, &grid);
        for (n, v) in w.iter().enumerate() {
            let expected = 0.5 * (2.0 * PI * 100.0 * n as f64 / 16_000.0).sin();
            assert!((*v as f64 - expected).abs() < 1e-5);
        }
    }

    #[test]
    fn corpus_split_is_disjoint_and_deterministic() {
        let s = spec();
        let a = corpus_build(&s, 200, 50, 11).unwrap();
        let b = corpus_build(&s, 200, 50, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len(), 200);
        assert!(styles_of(&a.train).is_disjoint(&styles_of(&a.eval)));
        for u in a.train.iter().chain(&a.eval) {
            assert!((2..=12).contains(&u.text.len()));
            assert!(u.text.as_bytes().windows(2).all(|w| w[0] != w[1]));
        }
    }
}
