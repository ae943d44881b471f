use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::{Example, TransducerModel};
use crate::error::{bail, Result};
use crate::numerics::ParamStore;
use crate::tokens::SemanticSeq;
use crate::toyworld::{ToySpec, Utterance};
use crate::training::{run_training, TrainConfig, TrainReport, Trainable};

impl Trainable for TransducerModel {
    fn store(&self) -> &ParamStore {
        TransducerModel::store(self)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        TransducerModel::store_mut(self)
    }
}

/// Pairs `target`'s text and semantic tokens with `prompt`'s semantic tokens.
pub fn example_from(spec: &ToySpec, target: &Utterance, prompt: &Utterance) -> Result<Example> {
    Ok(Example {
        text: spec.text_from_str(&target.text)?,
        target: SemanticSeq::new(target.semantic.clone(), spec.semantic_vocab())?,
        prompt: SemanticSeq::new(prompt.semantic.clone(), spec.semantic_vocab())?,
    })
}

/// Utterances sharing rate and pitch, which is all a semantic prompt carries.
#[derive(Debug, Clone)]
pub struct PromptIndex {
    groups: BTreeMap<(usize, usize), Vec<usize>>,
}

impl PromptIndex {
    pub fn new(utterances: &[Utterance]) -> Self {
        Self {
            groups: crate::toyworld::group_by(utterances, |u| (u.r, u.p)),
        }
    }

    /// A random utterance with the same rate and pitch as `i`, other than `i`
    /// when the group allows it.
    pub fn partner(&self, utterances: &[Utterance], i: usize, rng: &mut impl Rng) -> usize {
        let u = &utterances[i];
        let group = &self.groups[&(u.r, u.p)];
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

/// One example per utterance with a seeded same-style prompt.
pub fn paired_examples(spec: &ToySpec, utterances: &[Utterance], seed: u64) -> Result<Vec<Example>> {
    let index = PromptIndex::new(utterances);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..utterances.len())
        .map(|i| {
            let j = index.partner(utterances, i, &mut rng);
            example_from(spec, &utterances[i], &utterances[j])
        })
        .collect()
}

/// Trains on randomly drawn batches, re-pairing prompts at every draw.
pub fn train_interpreter(
    model: &mut TransducerModel,
    spec: &ToySpec,
    utterances: &[Utterance],
    cfg: &TrainConfig,
    seed: u64,
    on_step: impl FnMut(usize, f64),
) -> Result<TrainReport> {
    if utterances.is_empty() {
        bail!(Data, "no training utterances");
    }
    if spec.semantic_vocab() != model.config().semantic_vocab || spec.phonemes != model.config().phonemes {
        bail!(Config, "toy spec vocabulary does not match the interpreter config");
    }
    let index = PromptIndex::new(utterances);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_training(
        model,
        cfg,
        |m, g, _| {
            let mut batch = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let i = rng.random_range(0..utterances.len());
                let j = index.partner(utterances, i, &mut rng);
                batch.push(example_from(spec, &utterances[i], &utterances[j])?);
            }
            let refs: Vec<&Example> = batch.iter().collect();
            m.batch_loss(g, &refs)
        },
        on_step,
    )
}
