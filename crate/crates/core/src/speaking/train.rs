use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::mask::{sample_group_mask_with, Level, MaskPattern};
use super::model::{AcousticPrompt, GmlmInput, PromptSource, SpeakingModel};
use crate::error::{bail, Result};
use crate::numerics::ParamStore;
use crate::tokens::{AcousticGrid, SemanticSeq};
use crate::toyworld::{ToySpec, Utterance};
use crate::training::{run_training, TrainConfig, TrainReport, Trainable};

/// Share of training items that practise the coarse level.
pub const COARSE_LEVEL_PROB: f64 = 0.7;

impl Trainable for SpeakingModel {
    fn store(&self) -> &ParamStore {
        SpeakingModel::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        SpeakingModel::store_mut(self)
    }
}

pub fn prompt_from(spec: &ToySpec, u: &Utterance) -> Result<AcousticPrompt> {
    AcousticPrompt::new(SemanticSeq::new(u.semantic.clone(), spec.semantic_vocab())?, u.grid())
}

/// Input mask and scored entries of one training item.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMask {
    pub input: MaskPattern,
    pub loss: MaskPattern,
}

/// Coarse items hide an arccos-distributed share of coarse positions (and all
/// fine tokens, as during the coarse decoding phase); fine items show the
/// coarse level and hide every fine token, as in the final decoding pass.
pub fn training_mask(len: usize, rng: &mut impl Rng) -> Result<TrainingMask> {
    if rng.random::<f64>() < COARSE_LEVEL_PROB {
        let theta = rng.random::<f64>() * std::f64::consts::FRAC_PI_2;
        let ratio = theta.cos().clamp(1.0 / len as f64, 1.0);
        let loss = sample_group_mask_with(len, ratio, Level::Coarse, rng)?;
        let mut input = loss.clone();
        input.set_level(Level::Fine, true);
        Ok(TrainingMask { input, loss })
    } else {
        let mut loss = MaskPattern::none(len);
        loss.set_level(Level::Fine, true);
        Ok(TrainingMask {
            input: loss.clone(),
            loss,
        })
    }
}

/// Default schedule for the desk-scale model: 9000 steps of a cosine decay
/// laid out over 20000, so the learning rate stays near its peak throughout.
pub fn speaker_recipe() -> TrainConfig {
    TrainConfig {
        steps: 9000,
        decay_steps: Some(20000),
        ..TrainConfig::default()
    }
}

/// Same-speaker utterance lookup for acoustic prompts.
#[derive(Debug, Clone)]
pub struct SpeakerIndex {
    groups: BTreeMap<usize, Vec<usize>>,
}

impl SpeakerIndex {
    pub fn new(utterances: &[Utterance]) -> Self {
        Self {
            groups: crate::toyworld::group_by(utterances, |u| u.sigma),
        }
    }

    /// Another utterance by the same speaker as `i` (itself if it is alone).
    pub fn partner(&self, utterances: &[Utterance], i: usize, rng: &mut impl Rng) -> usize {
        let group = &self.groups[&utterances[i].sigma];
        if group.len() == 1 {
            return i;
        }
        loop {
            let j = group[rng.random_range(0..group.len())];
            if j != i {
                return j;
            }
        }
    }
}

/// Trains on random batches; each target is prompted by a different
/// utterance of the same speaker.
pub fn train_speaker(
    model: &mut SpeakingModel,
    spec: &ToySpec,
    utterances: &[Utterance],
    cfg: &TrainConfig,
    seed: u64,
    on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if utterances.is_empty() {
        bail!(Data, "no training utterances");
    }
    if spec.semantic_vocab() != model.config().semantic_vocab || spec.codebook_size != model.config().codebook_size {
        bail!(Config, "toy spec vocabulary does not match the speaker config");
    }
    let index = SpeakerIndex::new(utterances);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_training(
        model,
        cfg,
        |m, g, _| {
            let mut items: Vec<(SemanticSeq, AcousticGrid, TrainingMask, AcousticPrompt)> = Vec::new();
            for _ in 0..cfg.batch_size {
                let i = rng.random_range(0..utterances.len());
                let j = index.partner(utterances, i, &mut rng);
                let u = &utterances[i];
                let masks = training_mask(u.len(), &mut rng)?;
                items.push((u.semantic_seq(), u.grid(), masks, prompt_from(spec, &utterances[j])?));
            }
            let inputs: Vec<GmlmInput<'_>> = items
                .iter()
                .map(|(s, y, m, _)| GmlmInput {
                    semantic: s,
                    tokens: y,
                    mask: &m.input,
                })
                .collect();
            let prompts: Vec<&AcousticPrompt> = items.iter().map(|it| &it.3).collect();
            let (logits, spans) = m.forward_batch(g, &inputs, PromptSource::Recompute(&prompts))?;
            let mut terms = Vec::with_capacity(items.len());
            for ((_, y, masks, _), rows) in items.iter().zip(spans) {
                let loss = m.gmlm_loss_node(g, logits, rows, y, &masks.loss)?;
                terms.push(loss.normalized(g));
            }
            let total = g.sum(&terms)?;
            Ok(g.scale(total, 1.0 / items.len() as f64))
        },
        on_step,
    )
}
