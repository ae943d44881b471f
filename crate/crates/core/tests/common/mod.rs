//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use std::io::Write;

use tokcascade::interpreting::{InterpreterConfig, TransducerModel, Variant};
use tokcascade::numerics::Tensor;
use tokcascade::speaking::{SpeakingConfig, SpeakingModel};
use tokcascade::training::Trainable;

/// Writes straight to the process stdout so the line shows up even when the
/// test harness captures output.
pub fn report(criterion: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout();
    let _ = writeln!(out, "[{verdict}] {criterion}: {detail}");
    let _ = out.flush();
}

pub fn binomial(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `-log Σ_paths Π p` by listing every placement of `T` emits among the first
/// `N + T - 1` steps (the last step is always a blank).
pub fn enumerate_nll(log_probs: &[f64], frames: usize, target: &[usize], vocab: usize) -> f64 {
    let t_len = target.len();
    let steps = frames + t_len - 1;
    let width = t_len + 1;
    let blank = vocab - 1;
    let mut total = 0.0f64;
    let mut max_score = f64::NEG_INFINITY;
    let mut scores = Vec::new();
    for bits in 0u32..(1 << steps) {
        if bits.count_ones() as usize != t_len {
            continue;
        }
        let (mut t, mut u, mut score) = (0usize, 0usize, 0.0f64);
        for i in 0..steps {
            let row = (t * width + u) * vocab;
            if bits >> i & 1 == 1 {
                score += log_probs[row + target[u]];
                u += 1;
            } else {
                score += log_probs[row + blank];
                t += 1;
            }
        }
        score += log_probs[(t * width + u) * vocab + blank];
        max_score = max_score.max(score);
        scores.push(score);
    }
    for s in &scores {
        total += (s - max_score).exp();
    }
    -(max_score + total.ln())
}

/// Textbook edit distance with the full table.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}

#[derive(Debug)]
pub struct Audit {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: String,
}

/// Compares every scalar of every parameter with a central difference.
pub fn fd_audit<M: Trainable>(model: &mut M, analytic: &[Option<Tensor>], loss: impl Fn(&M) -> f64) -> Audit {
    let h = 1e-5;
    let mut audit = Audit {
        checked: 0,
        max_rel: 0.0,
        worst: String::new(),
    };
    let ids: Vec<_> = model.store().ids().collect();
    for (k, id) in ids.into_iter().enumerate() {
        let n = model.store().get(id).len();
        for i in 0..n {
            let orig = model.store().get(id).data()[i];
            model.store_mut().get_mut(id).data_mut()[i] = orig + h;
            let up = loss(model);
            model.store_mut().get_mut(id).data_mut()[i] = orig - h;
            let down = loss(model);
            model.store_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let exact = analytic[k].as_ref().map_or(0.0, |t| t.data()[i]);
            // the floor keeps round-off on exactly-zero gradients (about 1e-10 here) from counting as error
            let rel = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-5);
            if rel > audit.max_rel {
                audit.max_rel = rel;
                audit.worst = format!(
                    "{}[{i}] analytic {exact:.3e} numeric {numeric:.3e}",
                    model.store().name(id)
                );
            }
            audit.checked += 1;
        }
    }
    audit
}

pub fn tiny_interpreter(variant: Variant, semantic_vocab: usize, seed: u64) -> TransducerModel {
    let cfg = InterpreterConfig {
        phonemes: 4,
        semantic_vocab,
        dim: 8,
        heads: 2,
        text_layers: 1,
        text_ff_inner: 8,
        pred_layers: 2,
        pred_kernel: 3,
        joint_dim: 6,
        joint_ff_inner: 6,
        variant,
        max_symbols_per_frame: 3,
    };
    TransducerModel::new(cfg, seed).unwrap()
}

pub fn tiny_speaker(seed: u64) -> SpeakingModel {
    let cfg = SpeakingConfig {
        semantic_vocab: 4,
        codebook_size: 5,
        dim: 8,
        heads: 2,
        layers: 1,
        conv_kernel: 3,
        ff_inner: 8,
        prompt_layers: 1,
    };
    SpeakingModel::new(cfg, seed).unwrap()
}

/// Header fields of a canonical 44-byte RIFF/WAVE PCM file.
#[derive(Debug, PartialEq)]
pub struct WavHeader {
    pub channels: u16,
    pub sample_rate: u32,
    pub bits: u16,
    pub format: u16,
    pub samples: usize,
}

pub fn parse_wav(bytes: &[u8]) -> Option<WavHeader> {
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    if u32_at(4) as usize != bytes.len() - 8 {
        return None;
    }
    let mut pos = 12;
    let mut header = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            header = Some((u16_at(body), u16_at(body + 2), u32_at(body + 4), u16_at(body + 14)));
        } else if id == b"data" {
            let (format, channels, sample_rate, bits) = header?;
            if body + size != bytes.len() {
                return None;
            }
            return Some(WavHeader {
                channels,
                sample_rate,
                bits,
                format,
                samples: size / (bits as usize / 8) / channels as usize,
            });
        }
        pos = body + size + size % 2;
    }
    None
}
