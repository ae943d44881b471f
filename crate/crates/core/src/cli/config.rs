use std::path::{Path, PathBuf};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{bail, Result};
use crate::interpreting::InterpreterConfig;
use crate::speaking::{DecodeConfig, SpeakingConfig};
use crate::toyworld::ToySpec;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_eval: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_eval: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecodeSection {
    pub n_c: usize,
    pub temperature: f64,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            n_c: d.n_c,
            temperature: d.temperature,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub corpus_dir: Option<PathBuf>,
}

fn interpreter_training() -> TrainConfig {
    TrainConfig {
        steps: 3000,
        max_seconds: Some(600.0),
        ..TrainConfig::default()
    }
}

fn speaker_training() -> TrainConfig {
    crate::speaking::speaker_recipe()
}

/// Keys given in the file replace those of `base`; the rest keep its values.
fn overlay<'de, D: Deserializer<'de>>(base: TrainConfig, d: D) -> std::result::Result<TrainConfig, D::Error> {
    let patch = toml::Table::deserialize(d)?;
    let mut table = toml::Table::try_from(base).map_err(D::Error::custom)?;
    table.extend(patch);
    TrainConfig::deserialize(table).map_err(D::Error::custom)
}

fn interpreter_section<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    overlay(interpreter_training(), d)
}

fn speaker_section<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<TrainConfig, D::Error> {
    overlay(speaker_training(), d)
}

/// Top-level configuration file. Only `seed` is required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    #[serde(default)]
    pub toy: ToySpec,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub interpreter: InterpreterConfig,
    #[serde(default)]
    pub speaker: SpeakingConfig,
    #[serde(default = "interpreter_training", deserialize_with = "interpreter_section")]
    pub train_interpreter: TrainConfig,
    #[serde(default = "speaker_training", deserialize_with = "speaker_section")]
    pub train_speaker: TrainConfig,
    #[serde(default)]
    pub decode: DecodeSection,
    #[serde(default)]
    pub paths: Paths,
}

impl Config {
    /// Defaults everywhere except the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            toy: ToySpec::default(),
            corpus: CorpusConfig::default(),
            interpreter: InterpreterConfig::default(),
            speaker: SpeakingConfig::default(),
            train_interpreter: interpreter_training(),
            train_speaker: speaker_training(),
            decode: DecodeSection::default(),
            paths: Paths::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| crate::Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| crate::Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| crate::Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.toy.validate()?;
        self.interpreter.validate()?;
        self.speaker.validate()?;
        self.train_interpreter.validate()?;
        self.train_speaker.validate()?;
        if self.corpus.n_train == 0 || self.corpus.n_eval == 0 {
            bail!(Config, "corpus sizes must be positive");
        }
        if self.interpreter.phonemes != self.toy.phonemes
            || self.interpreter.semantic_vocab != self.toy.semantic_vocab()
        {
            bail!(Config, "interpreter vocabulary does not match the toy spec");
        }
        if self.speaker.semantic_vocab != self.toy.semantic_vocab()
            || self.speaker.codebook_size != self.toy.codebook_size
        {
            bail!(Config, "speaker vocabulary does not match the toy spec");
        }
        self.decode_config(0).validate()
    }

    pub fn decode_config(&self, offset: u64) -> DecodeConfig {
        DecodeConfig {
            n_c: self.decode.n_c,
            temperature: self.decode.temperature,
            seed: self.seed.wrapping_add(offset),
        }
    }
}
