//! Metrics and timing: token error rate, speaker accuracy, transducer NLL and
//! real-time factor.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::interpreting::{Example, TransducerModel};
use crate::tokens::AcousticGrid;
use crate::toyworld::{classify_speaker, ToySpec};

fn edits<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    strsim::generic_levenshtein(&a.iter().collect::<Vec<_>>(), &b.iter().collect::<Vec<_>>())
}

/// Levenshtein distance divided by the reference length.
pub fn token_error_rate<T: PartialEq>(hyp: &[T], reference: &[T]) -> Result<f64> {
    if reference.is_empty() {
        bail!(Contract, "token error rate needs a nonempty reference");
    }
    Ok(edits(hyp, reference) as f64 / reference.len() as f64)
}

/// Total edits over total reference length.
pub fn corpus_token_error_rate<T: PartialEq>(pairs: &[(Vec<T>, Vec<T>)]) -> Result<f64> {
    let mut distance = 0;
    let mut total = 0;
    for (hyp, reference) in pairs {
        if reference.is_empty() {
            bail!(Contract, "token error rate needs nonempty references");
        }
        distance += edits(hyp, reference);
        total += reference.len();
    }
    if total == 0 {
        bail!(Contract, "no references");
    }
    Ok(distance as f64 / total as f64)
}

/// Generated grid to check against the speaker of its acoustic prompt.
#[derive(Debug, Clone)]
pub struct SpeakerCase {
    pub semantic: Vec<usize>,
    pub grid: AcousticGrid,
    pub expected: usize,
}

/// Share of cases classified as the expected speaker; rejections count as misses.
pub fn speaker_accuracy(spec: &ToySpec, cases: &[SpeakerCase]) -> Result<f64> {
    if cases.is_empty() {
        bail!(Contract, "speaker accuracy over no utterances");
    }
    let mut hits = 0;
    for c in cases {
        if classify_speaker(spec, &c.semantic, &c.grid)? == Some(c.expected) {
            hits += 1;
        }
    }
    Ok(hits as f64 / cases.len() as f64)
}

/// Mean per-utterance transducer loss.
pub fn eval_nll(model: &TransducerModel, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        bail!(Contract, "eval_nll over an empty dataset");
    }
    let mut total = 0.0;
    for e in examples {
        total += model.nll(e)?;
    }
    Ok(total / examples.len() as f64)
}

/// Seconds of generated audio per second of wall time.
pub fn rtf_from(frames: usize, frame_rate: f64, seconds: f64) -> f64 {
    frames as f64 / frame_rate / seconds
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtfMeasurement {
    /// Median over timed runs.
    pub rtf: f64,
    pub runs: Vec<f64>,
    /// Frames generated per run.
    pub frames: usize,
    pub threads: usize,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Runs `decode` over every item once as warm-up, then `runs` timed passes.
/// `decode` returns the number of frames it generated.
pub fn measure_rtf<T>(
    items: &[T],
    frame_rate: f64,
    runs: usize,
    mut decode: impl FnMut(&T) -> Result<usize>,
) -> Result<RtfMeasurement> {
    if items.is_empty() || runs == 0 {
        bail!(Contract, "RTF needs a nonempty dataset and at least one run");
    }
    for it in items {
        decode(it)?;
    }
    let mut rtfs = Vec::with_capacity(runs);
    let mut frames = 0;
    for _ in 0..runs {
        let start = Instant::now();
        frames = 0;
        for it in items {
            frames += decode(it)?;
        }
        rtfs.push(rtf_from(frames, frame_rate, start.elapsed().as_secs_f64()));
    }
    Ok(RtfMeasurement {
        rtf: median(&rtfs),
        runs: rtfs,
        frames,
        threads: 1,
    })
}

/// Like [`measure_rtf`] but decodes items concurrently on the pool.
pub fn measure_rtf_parallel<T: Sync>(
    pool: &rayon::ThreadPool,
    items: &[T],
    frame_rate: f64,
    runs: usize,
    decode: impl Fn(&T) -> Result<usize> + Sync,
) -> Result<RtfMeasurement> {
    use rayon::prelude::*;
    if items.is_empty() || runs == 0 {
        bail!(Contract, "RTF needs a nonempty dataset and at least one run");
    }
    let pass = || -> Result<usize> { pool.install(|| items.par_iter().map(&decode).sum()) };
    pass()?;
    let mut rtfs = Vec::with_capacity(runs);
    let mut frames = 0;
    for _ in 0..runs {
        let start = Instant::now();
        frames = pass()?;
        rtfs.push(rtf_from(frames, frame_rate, start.elapsed().as_secs_f64()));
    }
    Ok(RtfMeasurement {
        rtf: median(&rtfs),
        runs: rtfs,
        frames,
        threads: pool.current_num_threads(),
    })
}

/// Worker threads allowed by `TOKCASCADE_THREADS` (default: all cores).
pub fn thread_cap() -> usize {
    std::env::var("TOKCASCADE_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap())
        .build()
        .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))
}

/// CRC-32 of a value's JSON form, for tagging reports with their configuration.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    Ok(format!(
        "{:08x}",
        crc32fast::hash(serde_json::to_string(value)?.as_bytes())
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub variant: String,
    pub rtf: f64,
    pub nll: Option<f64>,
    pub ter: Option<f64>,
    pub speaker_accuracy: Option<f64>,
    pub forward_passes: Option<usize>,
    pub threads: usize,
    pub config_hash: String,
}

impl BenchReport {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Fixed-width table of several reports.
    pub fn table(reports: &[BenchReport]) -> String {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
        let mut out = format!(
            "{:<12} {:>10} {:>8} {:>8} {:>8} {:>7} {:>8} {:>9}\n",
            "variant", "rtf", "nll", "ter", "spk_acc", "passes", "threads", "config"
        );
        for r in reports {
            out += &format!(
                "{:<12} {:>10.2} {:>8} {:>8} {:>8} {:>7} {:>8} {:>9}\n",
                r.variant,
                r.rtf,
                opt(r.nll),
                opt(r.ter),
                opt(r.speaker_accuracy),
                r.forward_passes.map_or("-".to_string(), |n| n.to_string()),
                r.threads,
                r.config_hash
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ter_examples() {
        assert_eq!(token_error_rate(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
        assert_eq!(token_error_rate(&[1, 1, 5], &[1, 1, 5, 5]).unwrap(), 0.25);
        assert!(matches!(
            token_error_rate::<usize>(&[1], &[]),
            Err(crate::Error::Contract(_))
        ));
        // bounded by max(len)/len(ref)
        assert_eq!(token_error_rate(&[7, 7, 7, 7], &[1, 2]).unwrap(), 2.0);
    }

    #[test]
    fn rtf_definition() {
        assert!((rtf_from(100, 50.0, 0.1) - 20.0).abs() < 1e-12);
    }

    #[test]
    fn median_of_runs() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }

    #[test]
    fn report_line_round_trips() {
        let r = BenchReport {
            variant: "plusplus".into(),
            rtf: 12.5,
            nll: Some(1.3),
            ter: None,
            speaker_accuracy: None,
            forward_passes: Some(17),
            threads: 1,
            config_hash: "0badf00d".into(),
        };
        let line = r.to_json_line().unwrap();
        assert_eq!(serde_json::from_str::<BenchReport>(&line).unwrap(), r);
        assert!(BenchReport::table(&[r]).contains("plusplus"));
    }
}
