//! Token sequence types shared by both stages.

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Number of quantizer groups.
pub const GROUPS: usize = 2;
/// Residual depth per group.
pub const DEPTHS: usize = 2;

/// Phoneme ids `x_1..x_N`; never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TextSeq(Vec<usize>);

impl TextSeq {
    pub fn new(tokens: Vec<usize>, alphabet: usize) -> Result<Self> {
        if tokens.is_empty() {
            bail!(Input, "empty text");
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= alphabet) {
            bail!(Index, "phoneme id {bad} outside alphabet of {alphabet}");
        }
        Ok(Self(tokens))
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Semantic token ids `s_1..s_T`; may be empty, never contains the blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SemanticSeq(Vec<usize>);

impl SemanticSeq {
    pub fn new(tokens: Vec<usize>, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t >= vocab) {
            bail!(Index, "semantic id {bad} outside vocabulary of {vocab}");
        }
        Ok(Self(tokens))
    }

    /// Unchecked construction for ids already known to be in range.
    pub fn from_raw(tokens: Vec<usize>) -> Self {
        Self(tokens)
    }

    pub fn tokens(&self) -> &[usize] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Codes `y^{i,j}` of a single frame, indexed `[group][depth]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct AcousticTokenFrame {
    pub codes: [[usize; DEPTHS]; GROUPS],
}

impl AcousticTokenFrame {
    pub fn code(&self, group: usize, depth: usize) -> usize {
        self.codes[group][depth]
    }
}

/// Acoustic tokens for a whole utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AcousticGrid {
    frames: Vec<AcousticTokenFrame>,
}

impl AcousticGrid {
    pub fn new(frames: Vec<AcousticTokenFrame>) -> Self {
        Self { frames }
    }

    /// Builds a grid from `streams[group][depth][t]`.
    pub fn from_streams(streams: &[[Vec<usize>; DEPTHS]; GROUPS]) -> Result<Self> {
        let t = streams[0][0].len();
        if streams.iter().flatten().any(|s| s.len() != t) {
            bail!(Input, "acoustic streams of unequal length");
        }
        let frames = (0..t)
            .map(|i| {
                let mut f = AcousticTokenFrame::default();
                for g in 0..GROUPS {
                    for d in 0..DEPTHS {
                        f.codes[g][d] = streams[g][d][i];
                    }
                }
                f
            })
            .collect();
        Ok(Self { frames })
    }

    pub fn to_streams(&self) -> [[Vec<usize>; DEPTHS]; GROUPS] {
        let stream = |g: usize, d: usize| self.frames.iter().map(|f| f.codes[g][d]).collect();
        [[stream(0, 0), stream(0, 1)], [stream(1, 0), stream(1, 1)]]
    }

    pub fn frames(&self) -> &[AcousticTokenFrame] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &AcousticTokenFrame {
        &self.frames[t]
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self, codebook_size: usize) -> Result<()> {
        for f in &self.frames {
            if f.codes.iter().flatten().any(|&c| c >= codebook_size) {
                bail!(Index, "acoustic code outside codebook of {codebook_size}");
            }
        }
        Ok(())
    }
}
