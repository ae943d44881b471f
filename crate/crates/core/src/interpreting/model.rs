use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decode::{greedy_search, GreedyTrace};
use super::lattice;
use crate::error::{bail, Result};
use crate::numerics::nn::{segment_positions, AttentionBlock, Embedding, FeedForward, LayerNorm, Linear};
use crate::numerics::{Axis, Graph, NodeId, ParamStore, Tensor};
use crate::tokens::{SemanticSeq, TextSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Reference added to prediction-network inputs, one joint feed-forward block.
    PlusPlus,
    /// Reference injected into the joint network, three joint feed-forward blocks.
    Baseline,
}

impl Variant {
    pub fn joint_ff_blocks(self) -> usize {
        match self {
            Variant::PlusPlus => 1,
            Variant::Baseline => 3,
        }
    }

    pub fn code(self) -> f64 {
        match self {
            Variant::PlusPlus => 0.0,
            Variant::Baseline => 1.0,
        }
    }

    pub fn from_code(code: f64) -> Result<Self> {
        match code as i64 {
            0 => Ok(Variant::PlusPlus),
            1 => Ok(Variant::Baseline),
            _ => bail!(Format, "unknown transducer variant code {code}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpreterConfig {
    pub phonemes: usize,
    pub semantic_vocab: usize,
    pub dim: usize,
    pub heads: usize,
    pub text_layers: usize,
    pub text_ff_inner: usize,
    pub pred_layers: usize,
    pub pred_kernel: usize,
    pub joint_dim: usize,
    pub joint_ff_inner: usize,
    pub variant: Variant,
    pub max_symbols_per_frame: usize,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        Self {
            phonemes: 16,
            semantic_vocab: 64,
            dim: 64,
            heads: 4,
            text_layers: 2,
            text_ff_inner: 128,
            pred_layers: 2,
            pred_kernel: 3,
            joint_dim: 64,
            joint_ff_inner: 128,
            variant: Variant::PlusPlus,
            max_symbols_per_frame: 8,
        }
    }
}

impl InterpreterConfig {
    /// Output width: every semantic id plus the blank.
    pub fn output_dim(&self) -> usize {
        self.semantic_vocab + 1
    }

    pub fn blank(&self) -> usize {
        self.semantic_vocab
    }

    /// Input tokens the prediction network can see, including the current one.
    pub fn receptive_field(&self) -> usize {
        self.pred_layers * (self.pred_kernel - 1) + 1
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("phonemes", self.phonemes),
            ("semantic_vocab", self.semantic_vocab),
            ("dim", self.dim),
            ("heads", self.heads),
            ("text_ff_inner", self.text_ff_inner),
            ("pred_layers", self.pred_layers),
            ("pred_kernel", self.pred_kernel),
            ("joint_dim", self.joint_dim),
            ("joint_ff_inner", self.joint_ff_inner),
            ("max_symbols_per_frame", self.max_symbols_per_frame),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            bail!(Config, "interpreter.{name} must be positive");
        }
        if !self.dim.is_multiple_of(self.heads) || !self.dim.is_multiple_of(2) {
            bail!(
                Config,
                "interpreter.dim {} must be even and divisible by heads {}",
                self.dim,
                self.heads
            );
        }
        Ok(())
    }

    /// Flattened numeric form stored alongside checkpoint weights.
    pub fn to_values(&self) -> Vec<f64> {
        [
            self.phonemes,
            self.semantic_vocab,
            self.dim,
            self.heads,
            self.text_layers,
            self.text_ff_inner,
            self.pred_layers,
            self.pred_kernel,
            self.joint_dim,
            self.joint_ff_inner,
            self.max_symbols_per_frame,
        ]
        .iter()
        .map(|&v| v as f64)
        .chain(std::iter::once(self.variant.code()))
        .collect()
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            bail!(Format, "interpreter config record has {} fields, expected 12", v.len());
        }
        let u = |i: usize| v[i] as usize;
        let cfg = Self {
            phonemes: u(0),
            semantic_vocab: u(1),
            dim: u(2),
            heads: u(3),
            text_layers: u(4),
            text_ff_inner: u(5),
            pred_layers: u(6),
            pred_kernel: u(7),
            joint_dim: u(8),
            joint_ff_inner: u(9),
            max_symbols_per_frame: u(10),
            variant: Variant::from_code(v[11])?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Fixed-size summary of a semantic prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RefEmbedding(pub Vec<f64>);

impl RefEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// One training or evaluation instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub text: TextSeq,
    pub target: SemanticSeq,
    pub prompt: SemanticSeq,
}

/// Log-probability table for a batch of lattices.
pub struct LatticeBatch {
    /// `[Σ N_b·(T_b+1)] × (K_s+1)` log-probs.
    pub log_probs: NodeId,
    /// First table row of each example.
    pub offsets: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
struct PredLayer {
    mix: Linear,
    norm: LayerNorm,
}

#[derive(Debug, Clone)]
pub struct TransducerModel {
    config: InterpreterConfig,
    store: ParamStore,
    text_embed: Embedding,
    text_blocks: Vec<(AttentionBlock, FeedForward)>,
    text_norm: LayerNorm,
    ref_token: Embedding,
    ref_run: Embedding,
    ref_proj: Linear,
    pred_embed: Embedding,
    pred_layers: Vec<PredLayer>,
    joint_enc: Linear,
    joint_pred: Linear,
    joint_ref: Option<Linear>,
    joint_ff: Vec<FeedForward>,
    joint_norm: LayerNorm,
    joint_out: Linear,
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

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

impl TransducerModel {
    pub fn new(config: InterpreterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        let (d, dj) = (config.dim, config.joint_dim);
        let text_embed = Embedding::new(&mut s, "text.embed", config.phonemes, d, &mut rng)?;
        let mut text_blocks = Vec::new();
        for i in 0..config.text_layers {
            text_blocks.push((
                AttentionBlock::new(&mut s, &format!("text.{i}.attn"), d, config.heads, &mut rng)?,
                FeedForward::new(&mut s, &format!("text.{i}.ff"), d, config.text_ff_inner, &mut rng)?,
            ));
        }
        let text_norm = LayerNorm::new(&mut s, "text.norm", d)?;
        let ref_token = Embedding::new(&mut s, "ref.token", config.semantic_vocab, d, &mut rng)?;
        let ref_run = Embedding::new(&mut s, "ref.run", 2, d, &mut rng)?;
        let ref_proj = Linear::new(&mut s, "ref.proj", 2 * d, d, &mut rng)?;
        // rows 0..K_s are tokens, row K_s is the start symbol
        let pred_embed = Embedding::new(&mut s, "pred.embed", config.semantic_vocab + 1, d, &mut rng)?;
        let mut pred_layers = Vec::new();
        for i in 0..config.pred_layers {
            pred_layers.push(PredLayer {
                mix: Linear::new(&mut s, &format!("pred.{i}.mix"), config.pred_kernel * d, d, &mut rng)?,
                norm: LayerNorm::new(&mut s, &format!("pred.{i}.norm"), d)?,
            });
        }
        let joint_enc = Linear::new(&mut s, "joint.enc", d, dj, &mut rng)?;
        let joint_pred = Linear::new(&mut s, "joint.pred", d, dj, &mut rng)?;
        let joint_ref = match config.variant {
            Variant::Baseline => Some(Linear::new(&mut s, "joint.ref", d, dj, &mut rng)?),
            Variant::PlusPlus => None,
        };
        let mut joint_ff = Vec::new();
        for i in 0..config.variant.joint_ff_blocks() {
            joint_ff.push(FeedForward::new(
                &mut s,
                &format!("joint.ff.{i}"),
                dj,
                config.joint_ff_inner,
                &mut rng,
            )?);
        }
        let joint_norm = LayerNorm::new(&mut s, "joint.norm", dj)?;
        let joint_out = Linear::new(&mut s, "joint.out", dj, config.output_dim(), &mut rng)?;
        Ok(Self {
            config,
            store: s,
            text_embed,
            text_blocks,
            text_norm,
            ref_token,
            ref_run,
            ref_proj,
            pred_embed,
            pred_layers,
            joint_enc,
            joint_pred,
            joint_ref,
            joint_ff,
            joint_norm,
            joint_out,
        })
    }

    pub fn config(&self) -> &InterpreterConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_prefix(&self, prefix: &[usize]) -> Result<()> {
        if let Some(&bad) = prefix.iter().find(|&&t| t >= self.config.semantic_vocab) {
            bail!(
                Index,
                "semantic id {bad} outside vocabulary of {}",
                self.config.semantic_vocab
            );
        }
        Ok(())
    }

    fn check_text(&self, x: &TextSeq) -> Result<()> {
        if let Some(&bad) = x.tokens().iter().find(|&&t| t >= self.config.phonemes) {
            bail!(Index, "phoneme id {bad} outside alphabet of {}", self.config.phonemes);
        }
        Ok(())
    }

    /// Text encoder over several texts packed as row spans.
    pub fn encode_texts(&self, g: &mut Graph, texts: &[&TextSeq]) -> Result<(NodeId, Vec<Range<usize>>)> {
        if texts.is_empty() {
            bail!(Input, "no texts to encode");
        }
        let mut ids = Vec::new();
        for x in texts {
            self.check_text(x)?;
            ids.extend_from_slice(x.tokens());
        }
        let spans = spans_of(texts.iter().map(|x| x.len()));
        let st = &self.store;
        let e = self.text_embed.forward(g, st, &ids)?;
        let pos = g.constant(segment_positions(&spans, self.config.dim));
        let mut h = g.add(e, pos)?;
        for (attn, ff) in &self.text_blocks {
            h = attn.self_attend(g, st, h, &spans, false)?;
            h = ff.forward(g, st, h)?;
        }
        Ok((self.text_norm.forward(g, st, h)?, spans))
    }

    /// One embedding row per input phoneme.
    pub fn encode_text(&self, x: &TextSeq) -> Result<Tensor> {
        let mut g = Graph::new();
        let (h, _) = self.encode_texts(&mut g, &[x])?;
        Ok(g.value(h).clone())
    }

    /// Reference encoder: mean of token embeddings alongside the mean of a
    /// run-start indicator (the first token, and every token that differs from
    /// its predecessor), then projected. The indicator mean is runs per token,
    /// which is how the embedding sees speaking rate.
    pub fn encode_reference_node(&self, g: &mut Graph, p_s: &SemanticSeq) -> Result<NodeId> {
        if p_s.is_empty() {
            bail!(Input, "empty semantic prompt");
        }
        let p = p_s.tokens();
        self.check_prefix(p)?;
        let st = &self.store;
        let tok = self.ref_token.forward(g, st, p)?;
        let tok = g.mean_rows(tok)?;
        let starts: Vec<usize> = (0..p.len()).map(|i| usize::from(i == 0 || p[i] != p[i - 1])).collect();
        let runs = self.ref_run.forward(g, st, &starts)?;
        let runs = g.mean_rows(runs)?;
        let both = g.concat(&[tok, runs], Axis::Cols)?;
        self.ref_proj.forward(g, st, both)
    }

    pub fn encode_reference(&self, p_s: &SemanticSeq) -> Result<RefEmbedding> {
        let mut g = Graph::new();
        let r = self.encode_reference_node(&mut g, p_s)?;
        Ok(RefEmbedding(g.value(r).data().to_vec()))
    }

    /// Causal convolution stack over `[start, s_1, ..]` sequences packed as
    /// spans; `refs` holds one reference row per span (added to inputs in the
    /// ++ variant). Row `u` of each span is `g_u`.
    fn prediction_network(&self, g: &mut Graph, inputs: &[Vec<usize>], refs: Option<NodeId>) -> Result<NodeId> {
        let spans = spans_of(inputs.iter().map(|v| v.len()));
        let ids: Vec<usize> = inputs.iter().flatten().copied().collect();
        let st = &self.store;
        let mut x = self.pred_embed.forward(g, st, &ids)?;
        if let (Variant::PlusPlus, Some(r)) = (self.config.variant, refs) {
            let owner: Vec<Option<usize>> = spans
                .iter()
                .enumerate()
                .flat_map(|(b, s)| std::iter::repeat_n(Some(b), s.len()))
                .collect();
            let rows = g.gather_rows(r, owner)?;
            x = g.add(x, rows)?;
        }
        let rows = ids.len();
        for layer in &self.pred_layers {
            let mut taps = vec![x];
            for k in 1..self.config.pred_kernel {
                let mut index = vec![None; rows];
                for s in &spans {
                    for i in s.clone() {
                        if i >= s.start + k {
                            index[i] = Some(i - k);
                        }
                    }
                }
                taps.push(g.gather_rows(x, index)?);
            }
            let cat = g.concat(&taps, Axis::Cols)?;
            let h = layer.mix.forward(g, st, cat)?;
            let h = g.gelu(h);
            let h = g.add(x, h)?;
            x = layer.norm.forward(g, st, h)?;
        }
        Ok(x)
    }

    fn start(&self) -> usize {
        self.config.semantic_vocab
    }

    /// `g_u` for a prefix, computed from the last receptive-field inputs only.
    fn prediction_node(&self, g: &mut Graph, prefix: &[usize], r: Option<NodeId>) -> Result<NodeId> {
        self.check_prefix(prefix)?;
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(self.start());
        input.extend_from_slice(prefix);
        let window = self.config.receptive_field();
        let input = input[input.len().saturating_sub(window)..].to_vec();
        let last = input.len() - 1;
        let out = self.prediction_network(g, &[input], r)?;
        g.gather_rows(out, vec![Some(last)])
    }

    pub fn prediction_step(&self, prefix: &SemanticSeq, r: &RefEmbedding) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let rn = self.ref_constant(&mut g, r)?;
        let out = self.prediction_node(&mut g, prefix.tokens(), Some(rn))?;
        Ok(g.value(out).data().to_vec())
    }

    /// Full-sequence prediction outputs `g_0..g_U`, without windowing.
    pub fn prediction_sequence(&self, prefix: &SemanticSeq, r: &RefEmbedding) -> Result<Tensor> {
        self.check_prefix(prefix.tokens())?;
        let mut g = Graph::new();
        let rn = self.ref_constant(&mut g, r)?;
        let mut input = vec![self.start()];
        input.extend_from_slice(prefix.tokens());
        let out = self.prediction_network(&mut g, &[input], Some(rn))?;
        Ok(g.value(out).clone())
    }

    fn ref_constant(&self, g: &mut Graph, r: &RefEmbedding) -> Result<NodeId> {
        if r.dim() != self.config.dim {
            bail!(
                Dimension,
                "reference embedding of dim {}, model dim {}",
                r.dim(),
                self.config.dim
            );
        }
        Ok(g.constant(Tensor::matrix(1, r.dim(), r.0.clone())?))
    }

    /// Joint network on already-projected rows: `hp + gp (+ rp)` → logits.
    fn joint_head(&self, g: &mut Graph, combined: NodeId) -> Result<NodeId> {
        let st = &self.store;
        let mut z = g.gelu(combined);
        for ff in &self.joint_ff {
            z = ff.forward(g, st, z)?;
        }
        let z = self.joint_norm.forward(g, st, z)?;
        self.joint_out.forward(g, st, z)
    }

    /// Logits over `K_s + 1` for one text embedding and one prediction
    /// embedding. The reference is only read by the baseline variant.
    pub fn joint_logits(&self, h_t: &[f64], g_u: &[f64], r: &RefEmbedding) -> Result<Vec<f64>> {
        let d = self.config.dim;
        if h_t.len() != d || g_u.len() != d {
            bail!(
                Dimension,
                "joint inputs of dims {} and {}, model dim {d}",
                h_t.len(),
                g_u.len()
            );
        }
        let mut g = Graph::new();
        let st = &self.store;
        let h = g.constant(Tensor::matrix(1, d, h_t.to_vec())?);
        let gu = g.constant(Tensor::matrix(1, d, g_u.to_vec())?);
        let hp = self.joint_enc.forward(&mut g, st, h)?;
        let gp = self.joint_pred.forward(&mut g, st, gu)?;
        let mut z = g.add(hp, gp)?;
        if let Some(jr) = &self.joint_ref {
            let rn = self.ref_constant(&mut g, r)?;
            let rp = jr.forward(&mut g, st, rn)?;
            z = g.add(z, rp)?;
        }
        let out = self.joint_head(&mut g, z)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Multiply-add count of one joint evaluation (projections of `h_t`, `g_u`
    /// and the reference included, norms and activations ignored).
    pub fn joint_flops(&self) -> usize {
        let c = &self.config;
        let (d, dj) = (c.dim, c.joint_dim);
        let mut f = 2 * (2 * d * dj);
        if self.joint_ref.is_some() {
            f += 2 * d * dj;
        }
        f += self.joint_ff.len() * 2 * (2 * dj * c.joint_ff_inner);
        f + 2 * dj * c.output_dim()
    }

    /// Log-probabilities over every lattice node of every example.
    pub fn lattice_log_probs(&self, g: &mut Graph, batch: &[&Example]) -> Result<LatticeBatch> {
        let texts: Vec<&TextSeq> = batch.iter().map(|e| &e.text).collect();
        let (h, text_spans) = self.encode_texts(g, &texts)?;
        let mut refs = Vec::with_capacity(batch.len());
        for e in batch {
            refs.push(self.encode_reference_node(g, &e.prompt)?);
        }
        let r = g.concat(&refs, Axis::Rows)?;
        let mut inputs = Vec::with_capacity(batch.len());
        for e in batch {
            self.check_prefix(e.target.tokens())?;
            let mut v = vec![self.start()];
            v.extend_from_slice(e.target.tokens());
            inputs.push(v);
        }
        let pred = self.prediction_network(g, &inputs, Some(r))?;
        let pred_spans = spans_of(inputs.iter().map(|v| v.len()));

        let st = &self.store;
        let hp = self.joint_enc.forward(g, st, h)?;
        let gp = self.joint_pred.forward(g, st, pred)?;
        let (mut hi, mut gi, mut ri, mut offsets) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (b, (ts, ps)) in text_spans.iter().zip(&pred_spans).enumerate() {
            offsets.push(hi.len());
            for t in ts.clone() {
                for u in ps.clone() {
                    hi.push(Some(t));
                    gi.push(Some(u));
                    ri.push(Some(b));
                }
            }
        }
        let a = g.gather_rows(hp, hi)?;
        let bnode = g.gather_rows(gp, gi)?;
        let mut z = g.add(a, bnode)?;
        if let Some(jr) = &self.joint_ref {
            let rp = jr.forward(g, st, r)?;
            let rows = g.gather_rows(rp, ri)?;
            z = g.add(z, rows)?;
        }
        let logits = self.joint_head(g, z)?;
        let log_probs = g.log_softmax(logits, self.config.output_dim())?;
        Ok(LatticeBatch { log_probs, offsets })
    }

    /// Mean per-utterance transducer NLL of a batch, as a graph node.
    pub fn batch_loss(&self, g: &mut Graph, batch: &[&Example]) -> Result<NodeId> {
        let lat = self.lattice_log_probs(g, batch)?;
        let mut terms = Vec::with_capacity(batch.len());
        for (e, &off) in batch.iter().zip(&lat.offsets) {
            terms.push(lattice::forward_nll(
                g,
                lat.log_probs,
                off,
                e.text.len(),
                e.target.tokens(),
                self.config.output_dim(),
            )?);
        }
        let total = g.sum(&terms)?;
        Ok(g.scale(total, 1.0 / batch.len() as f64))
    }

    /// `-log P(s | x, p_s)` summed over all alignments, as a graph node.
    pub fn transducer_loss(&self, g: &mut Graph, example: &Example) -> Result<NodeId> {
        self.batch_loss(g, &[example])
    }

    /// Value of the transducer loss for one example.
    pub fn nll(&self, example: &Example) -> Result<f64> {
        let mut g = Graph::new();
        let l = self.transducer_loss(&mut g, example)?;
        g.value(l).item()
    }

    /// Lattice log-prob table of one example as plain values.
    pub fn lattice_table(&self, example: &Example) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let lat = self.lattice_log_probs(&mut g, &[example])?;
        Ok(g.value(lat.log_probs).data().to_vec())
    }

    /// Same quantity as `nll`, by enumerating every alignment path.
    pub fn brute_force_loss(&self, example: &Example) -> Result<f64> {
        let n = example.text.len();
        if n + example.target.len() > lattice::MAX_ENUMERATION {
            bail!(Size, "N + T = {} exceeds enumeration bound", n + example.target.len());
        }
        let table = self.lattice_table(example)?;
        lattice::brute_force_nll(&table, n, example.target.tokens(), self.config.output_dim())
    }

    /// NLL under the emission-capped decoding distribution.
    pub fn capped_nll(&self, example: &Example, cap: usize) -> Result<f64> {
        let table = self.lattice_table(example)?;
        lattice::capped_nll(
            &table,
            example.text.len(),
            example.target.tokens(),
            self.config.output_dim(),
            cap,
        )
    }

    /// Greedy transducer search returning the full trace.
    pub fn greedy_trace(&self, x: &TextSeq, p_s: &SemanticSeq, cap: usize) -> Result<GreedyTrace> {
        let mut g = Graph::new();
        let (h, _) = self.encode_texts(&mut g, &[x])?;
        let r = self.encode_reference_node(&mut g, p_s)?;
        let st = &self.store;
        let hp = self.joint_enc.forward(&mut g, st, h)?;
        let rp = match &self.joint_ref {
            Some(jr) => Some(jr.forward(&mut g, st, r)?),
            None => None,
        };
        let hp = g.value(hp).clone();
        let rp = rp.map(|n| g.value(n).clone());
        let r = g.value(r).clone();
        let dj = self.config.joint_dim;

        // g_u only changes when a token is emitted
        let mut cached: Option<(usize, Vec<f64>)> = None;
        greedy_search(x.len(), self.config.blank(), cap, |t, prefix| {
            let mut g = Graph::new();
            let gp = match &cached {
                Some((u, v)) if *u == prefix.len() => v.clone(),
                _ => {
                    let rn = g.constant(r.clone());
                    let pn = self.prediction_node(&mut g, prefix, Some(rn))?;
                    let gp = self.joint_pred.forward(&mut g, st, pn)?;
                    let v = g.value(gp).data().to_vec();
                    cached = Some((prefix.len(), v.clone()));
                    v
                }
            };
            let mut z: Vec<f64> = hp.row(t).iter().zip(&gp).map(|(a, b)| a + b).collect();
            if let Some(rp) = &rp {
                for (zi, ri) in z.iter_mut().zip(rp.data()) {
                    *zi += ri;
                }
            }
            let zn = g.constant(Tensor::matrix(1, dj, z)?);
            let out = self.joint_head(&mut g, zn)?;
            Ok(g.value(out).data().to_vec())
        })
    }

    /// Greedy transducer search; never emits more than `cap` tokens per frame.
    pub fn greedy_decode(&self, x: &TextSeq, p_s: &SemanticSeq, cap: usize) -> Result<SemanticSeq> {
        Ok(SemanticSeq::from_raw(self.greedy_trace(x, p_s, cap)?.tokens))
    }

    pub(crate) fn argmax(xs: &[f64]) -> usize {
        argmax(xs)
    }
}
