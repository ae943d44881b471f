use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mask::MaskPattern;
use crate::error::{bail, Result};
use crate::numerics::nn::{segment_positions, AttentionBlock, ConvModule, Embedding, FeedForward, LayerNorm, Linear};
use crate::numerics::{AttnSegment, Axis, Graph, NodeId, ParamStore, Tensor};
use crate::tokens::{AcousticGrid, SemanticSeq, DEPTHS, GROUPS};

/// Output heads, one per (group, depth); head `g·DEPTHS + d`.
pub const HEADS: usize = GROUPS * DEPTHS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeakingConfig {
    pub semantic_vocab: usize,
    pub codebook_size: usize,
    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub conv_kernel: usize,
    pub ff_inner: usize,
    pub prompt_layers: usize,
}

impl Default for SpeakingConfig {
    fn default() -> Self {
        Self {
            semantic_vocab: 64,
            codebook_size: 64,
            dim: 128,
            heads: 4,
            layers: 4,
            conv_kernel: 7,
            ff_inner: 256,
            prompt_layers: 2,
        }
    }
}

impl SpeakingConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("semantic_vocab", self.semantic_vocab),
            ("codebook_size", self.codebook_size),
            ("dim", self.dim),
            ("heads", self.heads),
            ("layers", self.layers),
            ("ff_inner", self.ff_inner),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            bail!(Config, "speaker.{name} must be positive");
        }
        if !self.dim.is_multiple_of(self.heads) || !self.dim.is_multiple_of(2) {
            bail!(
                Config,
                "speaker.dim {} must be even and divisible by heads {}",
                self.dim,
                self.heads
            );
        }
        if self.conv_kernel.is_multiple_of(2) {
            bail!(Config, "speaker.conv_kernel must be odd");
        }
        Ok(())
    }

    pub fn to_values(&self) -> Vec<f64> {
        [
            self.semantic_vocab,
            self.codebook_size,
            self.dim,
            self.heads,
            self.layers,
            self.conv_kernel,
            self.ff_inner,
            self.prompt_layers,
        ]
        .iter()
        .map(|&v| v as f64)
        .collect()
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 8 {
            bail!(Format, "speaker config record has {} fields, expected 8", v.len());
        }
        let u = |i: usize| v[i] as usize;
        let cfg = Self {
            semantic_vocab: u(0),
            codebook_size: u(1),
            dim: u(2),
            heads: u(3),
            layers: u(4),
            conv_kernel: u(5),
            ff_inner: u(6),
            prompt_layers: u(7),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Acoustic prompt `p_a`: a reference utterance's semantic and acoustic tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticPrompt {
    pub semantic: SemanticSeq,
    pub grid: AcousticGrid,
}

impl AcousticPrompt {
    pub fn new(semantic: SemanticSeq, grid: AcousticGrid) -> Result<Self> {
        if semantic.is_empty() {
            bail!(Input, "empty acoustic prompt");
        }
        if semantic.len() != grid.len() {
            bail!(
                Input,
                "prompt has {} semantic tokens but {} acoustic frames",
                semantic.len(),
                grid.len()
            );
        }
        Ok(Self { semantic, grid })
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }
}

/// Cross-attention keys and values for every generator layer, computed once
/// per prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptCache {
    pub keys: Vec<Tensor>,
    pub values: Vec<Tensor>,
}

impl PromptCache {
    pub fn layers(&self) -> usize {
        self.keys.len()
    }

    pub fn prompt_len(&self) -> usize {
        self.keys.first().map_or(0, Tensor::rows)
    }
}

/// Logits `[T][group][depth][K_a]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GmlmLogits {
    len: usize,
    codebook: usize,
    data: Vec<f64>,
}

impl GmlmLogits {
    pub fn from_tensor(t: &Tensor, codebook: usize) -> Self {
        Self {
            len: t.rows(),
            codebook,
            data: t.data().to_vec(),
        }
    }

    /// `(T, groups, depths, K_a)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.len, GROUPS, DEPTHS, self.codebook)
    }

    pub fn get(&self, t: usize, group: usize, depth: usize) -> &[f64] {
        let start = (t * HEADS + group * DEPTHS + depth) * self.codebook;
        &self.data[start..start + self.codebook]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// One sequence of a batched forward pass.
pub struct GmlmInput<'a> {
    pub semantic: &'a SemanticSeq,
    /// Current token values; entries hidden by `mask` are ignored.
    pub tokens: &'a AcousticGrid,
    pub mask: &'a MaskPattern,
}

/// Where cross-attention keys and values come from.
pub enum PromptSource<'a> {
    /// Precomputed per-layer tensors.
    Cached(&'a [PromptCache]),
    /// Run the prompt network inside the current graph.
    Recompute(&'a [&'a AcousticPrompt]),
}

#[derive(Debug, Clone, Copy)]
struct GenLayer {
    attn: AttentionBlock,
    cross: AttentionBlock,
    conv: ConvModule,
    ff: FeedForward,
}

#[derive(Debug, Clone, Copy)]
struct Embedder {
    semantic: Embedding,
    acoustic: [Embedding; HEADS],
    frame: FeedForward,
}

#[derive(Debug, Clone)]
pub struct SpeakingModel {
    config: SpeakingConfig,
    store: ParamStore,
    /// Shared by the generator and the prompt network, so both read
    /// (semantic, acoustic) frames the same way.
    input: Embedder,
    prompt_blocks: Vec<(AttentionBlock, FeedForward)>,
    prompt_norm: LayerNorm,
    layers: Vec<GenLayer>,
    out_norm: LayerNorm,
    out: [Linear; HEADS],
}

fn spans_of(lengths: impl IntoIterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    lengths
        .into_iter()
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

impl Embedder {
    fn new(store: &mut ParamStore, name: &str, cfg: &SpeakingConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let semantic = Embedding::new(store, &format!("{name}.semantic"), cfg.semantic_vocab, cfg.dim, rng)?;
        let mut acoustic = Vec::with_capacity(HEADS);
        for g in 0..GROUPS {
            for d in 0..DEPTHS {
                // the extra row is the mask embedding of this slot
                acoustic.push(Embedding::new(
                    store,
                    &format!("{name}.acoustic.{g}.{d}"),
                    cfg.codebook_size + 1,
                    cfg.dim,
                    rng,
                )?);
            }
        }
        Ok(Self {
            semantic,
            acoustic: acoustic.try_into().expect("HEADS embeddings"),
            frame: FeedForward::new(store, &format!("{name}.frame"), cfg.dim, cfg.ff_inner, rng)?,
        })
    }

    /// Sum of semantic, per-slot acoustic and position embeddings, mixed
    /// within each frame by a feed-forward block.
    fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        semantic: &[usize],
        slots: &[Vec<usize>; HEADS],
        spans: &[Range<usize>],
        dim: usize,
    ) -> Result<NodeId> {
        let mut parts = vec![self.semantic.forward(g, store, semantic)?];
        for (emb, ids) in self.acoustic.iter().zip(slots) {
            parts.push(emb.forward(g, store, ids)?);
        }
        parts.push(g.constant(segment_positions(spans, dim)));
        let x = g.sum(&parts)?;
        self.frame.forward(g, store, x)
    }
}

impl SpeakingModel {
    pub fn new(config: SpeakingConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let d = config.dim;
        let input = Embedder::new(&mut s, "gen.input", &config, &mut rng)?;
        let mut prompt_blocks = Vec::new();
        for i in 0..config.prompt_layers {
            prompt_blocks.push((
                AttentionBlock::new(&mut s, &format!("prompt.{i}.attn"), d, config.heads, &mut rng)?,
                FeedForward::new(&mut s, &format!("prompt.{i}.ff"), d, config.ff_inner, &mut rng)?,
            ));
        }
        let prompt_norm = LayerNorm::new(&mut s, "prompt.norm", d)?;
        let mut layers = Vec::new();
        for i in 0..config.layers {
            layers.push(GenLayer {
                attn: AttentionBlock::new(&mut s, &format!("gen.{i}.attn"), d, config.heads, &mut rng)?,
                cross: AttentionBlock::new(&mut s, &format!("gen.{i}.cross"), d, config.heads, &mut rng)?,
                conv: ConvModule::new(&mut s, &format!("gen.{i}.conv"), d, config.conv_kernel, &mut rng)?,
                ff: FeedForward::new(&mut s, &format!("gen.{i}.ff"), d, config.ff_inner, &mut rng)?,
            });
        }
        let out_norm = LayerNorm::new(&mut s, "gen.out.norm", d)?;
        let mut out = Vec::with_capacity(HEADS);
        for g in 0..GROUPS {
            for dd in 0..DEPTHS {
                out.push(Linear::new(
                    &mut s,
                    &format!("gen.out.{g}.{dd}"),
                    d,
                    config.codebook_size,
                    &mut rng,
                )?);
            }
        }
        Ok(Self {
            config,
            store: s,
            input,
            prompt_blocks,
            prompt_norm,
            layers,
            out_norm,
            out: out.try_into().expect("HEADS heads"),
        })
    }

    pub fn config(&self) -> &SpeakingConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_semantic(&self, s: &[usize]) -> Result<()> {
        if let Some(&bad) = s.iter().find(|&&t| t >= self.config.semantic_vocab) {
            bail!(
                Index,
                "semantic id {bad} outside vocabulary of {}",
                self.config.semantic_vocab
            );
        }
        Ok(())
    }

    fn check_codes(&self, grid: &AcousticGrid) -> Result<()> {
        grid.validate(self.config.codebook_size)
    }

    /// Prompt network over packed prompts, then per-layer key/value projections.
    fn prompt_memory(
        &self,
        g: &mut Graph,
        prompts: &[&AcousticPrompt],
    ) -> Result<(Vec<(NodeId, NodeId)>, Vec<Range<usize>>)> {
        if prompts.is_empty() {
            bail!(Input, "no prompts");
        }
        let mut sem = Vec::new();
        let mut slots: [Vec<usize>; HEADS] = Default::default();
        for p in prompts {
            if p.is_empty() {
                bail!(Input, "empty acoustic prompt");
            }
            self.check_semantic(p.semantic.tokens())?;
            self.check_codes(&p.grid)?;
            sem.extend_from_slice(p.semantic.tokens());
            for f in p.grid.frames() {
                for gi in 0..GROUPS {
                    for d in 0..DEPTHS {
                        slots[gi * DEPTHS + d].push(f.codes[gi][d]);
                    }
                }
            }
        }
        let spans = spans_of(prompts.iter().map(|p| p.len()));
        let st = &self.store;
        let mut h = self.input.forward(g, st, &sem, &slots, &spans, self.config.dim)?;
        for (attn, ff) in &self.prompt_blocks {
            h = attn.self_attend(g, st, h, &spans, false)?;
            h = ff.forward(g, st, h)?;
        }
        let memory = self.prompt_norm.forward(g, st, h)?;
        let mut kv = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            kv.push(layer.cross.project_memory(g, st, memory)?);
        }
        Ok((kv, spans))
    }

    /// Runs the prompt network once; the result serves every decoding pass.
    pub fn encode_prompt(&self, prompt: &AcousticPrompt) -> Result<PromptCache> {
        let mut g = Graph::new();
        let (kv, _) = self.prompt_memory(&mut g, &[prompt])?;
        Ok(PromptCache {
            keys: kv.iter().map(|(k, _)| g.value(*k).clone()).collect(),
            values: kv.iter().map(|(_, v)| g.value(*v).clone()).collect(),
        })
    }

    /// Batched forward pass; returns logits `[Σ T_b] × (HEADS·K_a)` and row spans.
    pub fn forward_batch(
        &self,
        g: &mut Graph,
        inputs: &[GmlmInput<'_>],
        prompts: PromptSource<'_>,
    ) -> Result<(NodeId, Vec<Range<usize>>)> {
        if inputs.is_empty() {
            bail!(Input, "empty batch");
        }
        let k = self.config.codebook_size;
        let mut sem = Vec::new();
        let mut slots: [Vec<usize>; HEADS] = Default::default();
        for x in inputs {
            let t = x.semantic.len();
            if t == 0 {
                bail!(Input, "empty semantic sequence");
            }
            if x.tokens.len() != t || x.mask.len() != t {
                bail!(
                    Input,
                    "length mismatch: {t} semantic tokens, {} acoustic frames, mask of {}",
                    x.tokens.len(),
                    x.mask.len()
                );
            }
            self.check_semantic(x.semantic.tokens())?;
            sem.extend_from_slice(x.semantic.tokens());
            for (ti, f) in x.tokens.frames().iter().enumerate() {
                for gi in 0..GROUPS {
                    for d in 0..DEPTHS {
                        let id = if x.mask.is_masked(ti, gi, d) {
                            k
                        } else if f.codes[gi][d] < k {
                            f.codes[gi][d]
                        } else {
                            bail!(Index, "acoustic code {} outside codebook of {k}", f.codes[gi][d]);
                        };
                        slots[gi * DEPTHS + d].push(id);
                    }
                }
            }
        }
        let spans = spans_of(inputs.iter().map(|x| x.semantic.len()));

        let (kv, prompt_spans): (Vec<(NodeId, NodeId)>, Vec<Range<usize>>) = match prompts {
            PromptSource::Recompute(ps) => self.prompt_memory(g, ps)?,
            PromptSource::Cached(caches) => {
                if caches.len() != inputs.len() {
                    bail!(Input, "{} prompt caches for {} sequences", caches.len(), inputs.len());
                }
                if caches.iter().any(|c| c.layers() != self.layers.len()) {
                    bail!(Dimension, "prompt cache layer count does not match the model");
                }
                let mut kv = Vec::with_capacity(self.layers.len());
                for l in 0..self.layers.len() {
                    let ks: Vec<NodeId> = caches.iter().map(|c| g.constant(c.keys[l].clone())).collect();
                    let vs: Vec<NodeId> = caches.iter().map(|c| g.constant(c.values[l].clone())).collect();
                    kv.push((g.concat(&ks, Axis::Rows)?, g.concat(&vs, Axis::Rows)?));
                }
                (kv, spans_of(caches.iter().map(PromptCache::prompt_len)))
            }
        };
        if prompt_spans.len() != inputs.len() {
            bail!(Input, "{} prompts for {} sequences", prompt_spans.len(), inputs.len());
        }
        let segments: Vec<AttnSegment> = spans
            .iter()
            .zip(&prompt_spans)
            .map(|(q, k)| AttnSegment {
                q: q.clone(),
                k: k.clone(),
            })
            .collect();

        let st = &self.store;
        let mut h = self.input.forward(g, st, &sem, &slots, &spans, self.config.dim)?;
        for (layer, &(keys, values)) in self.layers.iter().zip(&kv) {
            h = layer.attn.self_attend(g, st, h, &spans, false)?;
            h = layer.cross.cross_attend(g, st, h, keys, values, segments.clone())?;
            h = layer.conv.forward(g, st, h, &spans)?;
            h = layer.ff.forward(g, st, h)?;
        }
        let h = self.out_norm.forward(g, st, h)?;
        let mut heads = Vec::with_capacity(HEADS);
        for head in &self.out {
            heads.push(head.forward(g, st, h)?);
        }
        Ok((g.concat(&heads, Axis::Cols)?, spans))
    }

    /// Logits for one sequence, with either a cached or a recomputed prompt.
    pub fn gmlm_forward(
        &self,
        semantic: &SemanticSeq,
        tokens: &AcousticGrid,
        mask: &MaskPattern,
        prompt: PromptSource<'_>,
    ) -> Result<GmlmLogits> {
        let mut g = Graph::new();
        let (logits, _) = self.forward_batch(&mut g, &[GmlmInput { semantic, tokens, mask }], prompt)?;
        Ok(GmlmLogits::from_tensor(g.value(logits), self.config.codebook_size))
    }

    /// Masked-entry NLL on the graph. `rows` is the span of this sequence in
    /// `logits`; `loss_mask` selects the entries scored.
    pub fn gmlm_loss_node(
        &self,
        g: &mut Graph,
        logits: NodeId,
        rows: Range<usize>,
        truth: &AcousticGrid,
        loss_mask: &MaskPattern,
    ) -> Result<GmlmLoss> {
        gmlm_loss(g, logits, rows.start, truth, loss_mask, self.config.codebook_size)
    }
}

/// Masked-entry negative log-likelihood.
#[derive(Debug, Clone, Copy)]
pub struct GmlmLoss {
    /// Sum over masked entries, as a graph node (`None` when nothing is masked).
    pub total: Option<NodeId>,
    pub masked: usize,
    /// Set when the mask was empty and the loss is defined as zero.
    pub empty: bool,
}

impl GmlmLoss {
    /// Loss normalized by the number of masked entries.
    pub fn normalized(&self, g: &mut Graph) -> NodeId {
        match self.total {
            Some(t) => g.scale(t, 1.0 / self.masked as f64),
            None => g.constant(Tensor::scalar(0.0)),
        }
    }
}

/// `Σ_{masked} −log softmax(logits)[y_true]` over a `[rows × HEADS·K_a]`
/// logit block starting at `row_offset`.
pub fn gmlm_loss(
    g: &mut Graph,
    logits: NodeId,
    row_offset: usize,
    truth: &AcousticGrid,
    mask: &MaskPattern,
    codebook: usize,
) -> Result<GmlmLoss> {
    if truth.len() != mask.len() {
        bail!(Input, "mask of length {} for {} frames", mask.len(), truth.len());
    }
    let width = HEADS * codebook;
    if g.value(logits).cols() != width || g.value(logits).rows() < row_offset + truth.len() {
        bail!(Dimension, "logit block does not cover the target grid");
    }
    let entries = mask.masked_entries();
    if entries.is_empty() {
        log::warn!("gmlm loss over an empty mask");
        return Ok(GmlmLoss {
            total: None,
            masked: 0,
            empty: true,
        });
    }
    let mut index = Vec::with_capacity(entries.len());
    for &(t, gi, d) in &entries {
        let code = truth.frame(t).codes[gi][d];
        if code >= codebook {
            bail!(Index, "acoustic code {code} outside codebook of {codebook}");
        }
        index.push((row_offset + t) * width + (gi * DEPTHS + d) * codebook + code);
    }
    let lp = g.log_softmax(logits, codebook)?;
    let picked = g.pick(lp, index)?;
    let total = g.sum_all(picked);
    Ok(GmlmLoss {
        total: Some(g.scale(total, -1.0)),
        masked: entries.len(),
        empty: false,
    })
}
