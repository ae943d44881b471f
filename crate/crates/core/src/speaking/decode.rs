use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::{schedule_keep_count, Level, MaskPattern};
use super::model::{AcousticPrompt, GmlmLogits, PromptSource, SpeakingModel};
use crate::error::{bail, Result};
use crate::numerics::log_softmax;
use crate::tokens::{AcousticGrid, AcousticTokenFrame, SemanticSeq, GROUPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeConfig {
    /// Coarse iterations; one fine pass follows.
    pub n_c: usize,
    /// Sampling temperature at the first iteration, annealed linearly to zero.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            n_c: 16,
            temperature: 1.0,
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_c == 0 {
            bail!(Config, "n_c must be at least 1");
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            bail!(Config, "temperature must be finite and non-negative");
        }
        Ok(())
    }

    /// Temperature used at coarse iteration `n` (1-based); zero means argmax.
    pub fn temperature_at(&self, n: usize) -> f64 {
        self.temperature * (1.0 - n as f64 / self.n_c as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheMode {
    /// Run the prompt network once and reuse its keys and values.
    Cached,
    /// Run the prompt network inside every forward pass.
    Recompute,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeTrace {
    pub forward_passes: usize,
    /// Input mask of every forward pass.
    pub masks: Vec<MaskPattern>,
    /// Token grid fed to every forward pass (masked entries hold placeholders).
    pub inputs: Vec<AcousticGrid>,
    /// Coarse positions still masked after each coarse iteration.
    pub coarse_masked: Vec<usize>,
    /// Positions committed at each coarse iteration.
    pub commits: Vec<Vec<usize>>,
    /// Logits of every forward pass, when recording was requested.
    pub logits: Vec<GmlmLogits>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Draws a token and returns it with its (untempered) model probability.
fn choose(logits: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> Result<(usize, f64)> {
    let lp = log_softmax(logits);
    let token = if temperature <= 0.0 {
        argmax(logits)
    } else {
        let scaled: Vec<f64> = logits.iter().map(|v| v / temperature).collect();
        let weights: Vec<f64> = log_softmax(&scaled).iter().map(|v| v.exp()).collect();
        match WeightedIndex::new(&weights) {
            Ok(dist) => dist.sample(rng),
            Err(_) => argmax(logits),
        }
    };
    if !lp[token].is_finite() {
        bail!(Data, "non-finite logits during decoding");
    }
    Ok((token, lp[token].exp()))
}

/// Group-iterative parallel decoding with a cached prompt.
pub fn g_ipd_decode(
    model: &SpeakingModel,
    s: &SemanticSeq,
    p_a: &AcousticPrompt,
    cfg: &DecodeConfig,
) -> Result<AcousticGrid> {
    Ok(g_ipd_decode_traced(model, s, p_a, cfg, CacheMode::Cached, false)?.0)
}

/// Coarse tokens over `n_c` confidence-ordered iterations, both groups of a
/// position committed together, then every fine token in one pass.
pub fn g_ipd_decode_traced(
    model: &SpeakingModel,
    s: &SemanticSeq,
    p_a: &AcousticPrompt,
    cfg: &DecodeConfig,
    mode: CacheMode,
    record_logits: bool,
) -> Result<(AcousticGrid, DecodeTrace)> {
    cfg.validate()?;
    if s.is_empty() {
        bail!(Input, "empty semantic sequence");
    }
    let len = s.len();
    let cache = match mode {
        CacheMode::Cached => Some(model.encode_prompt(p_a)?),
        CacheMode::Recompute => None,
    };
    let prompts = [p_a];
    let forward = |grid: &AcousticGrid, mask: &MaskPattern| -> Result<GmlmLogits> {
        let source = match &cache {
            Some(c) => PromptSource::Cached(std::slice::from_ref(c)),
            None => PromptSource::Recompute(&prompts),
        };
        model.gmlm_forward(s, grid, mask, source)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut frames = vec![AcousticTokenFrame::default(); len];
    let mut mask = MaskPattern::all(len);
    let mut trace = DecodeTrace::default();

    for n in 1..=cfg.n_c {
        let grid = AcousticGrid::new(frames.clone());
        let logits = forward(&grid, &mask)?;
        trace.forward_passes += 1;
        trace.masks.push(mask.clone());
        trace.inputs.push(grid);

        let masked = mask.positions(Level::Coarse);
        let temperature = cfg.temperature_at(n);
        let mut proposals = Vec::with_capacity(masked.len());
        for &t in &masked {
            let mut codes = [0; GROUPS];
            let mut confidence = 0.0;
            for (gi, code) in codes.iter_mut().enumerate() {
                let (tok, p) = choose(logits.get(t, gi, 0), temperature, &mut rng)?;
                *code = tok;
                confidence += p / GROUPS as f64;
            }
            proposals.push((t, codes, confidence));
        }
        if record_logits {
            trace.logits.push(logits);
        }

        // at least one commit per iteration keeps the masked count strictly falling
        let keep = schedule_keep_count(n, cfg.n_c, len)?.min(masked.len().saturating_sub(1));
        proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        let mut committed = Vec::new();
        for &(t, codes, _) in proposals.iter().take(masked.len() - keep) {
            for (gi, &c) in codes.iter().enumerate() {
                frames[t].codes[gi][0] = c;
            }
            mask.set(t, Level::Coarse, false);
            committed.push(t);
        }
        committed.sort_unstable();
        trace.commits.push(committed);
        trace.coarse_masked.push(mask.count(Level::Coarse));
    }

    let grid = AcousticGrid::new(frames.clone());
    let logits = forward(&grid, &mask)?;
    trace.forward_passes += 1;
    trace.masks.push(mask.clone());
    trace.inputs.push(grid);
    for (t, frame) in frames.iter_mut().enumerate() {
        for gi in 0..GROUPS {
            frame.codes[gi][1] = argmax(logits.get(t, gi, 1));
        }
    }
    if record_logits {
        trace.logits.push(logits);
    }
    Ok((AcousticGrid::new(frames), trace))
}
