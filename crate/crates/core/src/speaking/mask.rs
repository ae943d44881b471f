use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::tokens::{DEPTHS, GROUPS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Coarse,
    Fine,
}

impl Level {
    pub fn depth(self) -> usize {
        match self {
            Level::Coarse => 0,
            Level::Fine => 1,
        }
    }
}

/// Mask flags per position and depth level. Both groups share a flag, so
/// group symmetry holds by construction.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MaskPattern {
    flags: Vec<[bool; DEPTHS]>,
}

impl MaskPattern {
    pub fn none(len: usize) -> Self {
        Self {
            flags: vec![[false; DEPTHS]; len],
        }
    }

    pub fn all(len: usize) -> Self {
        Self {
            flags: vec![[true; DEPTHS]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn set(&mut self, t: usize, level: Level, masked: bool) {
        self.flags[t][level.depth()] = masked;
    }

    pub fn set_level(&mut self, level: Level, masked: bool) {
        for f in &mut self.flags {
            f[level.depth()] = masked;
        }
    }

    /// Whether `y^{group,depth}_t` is hidden; the group is irrelevant.
    pub fn is_masked(&self, t: usize, _group: usize, depth: usize) -> bool {
        self.flags[t][depth]
    }

    pub fn level_masked(&self, t: usize, level: Level) -> bool {
        self.flags[t][level.depth()]
    }

    /// Positions masked at a level.
    pub fn positions(&self, level: Level) -> Vec<usize> {
        (0..self.len()).filter(|&t| self.level_masked(t, level)).collect()
    }

    pub fn count(&self, level: Level) -> usize {
        self.flags.iter().filter(|f| f[level.depth()]).count()
    }

    /// Hidden entries `Y_M` as `(t, group, depth)`.
    pub fn masked_entries(&self) -> Vec<(usize, usize, usize)> {
        self.entries(true)
    }

    /// Visible entries `Y_U` as `(t, group, depth)`.
    pub fn unmasked_entries(&self) -> Vec<(usize, usize, usize)> {
        self.entries(false)
    }

    fn entries(&self, masked: bool) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for (t, f) in self.flags.iter().enumerate() {
            for g in 0..GROUPS {
                for (d, &m) in f.iter().enumerate() {
                    if m == masked {
                        out.push((t, g, d));
                    }
                }
            }
        }
        out
    }
}

/// Masks `⌈ratio·len⌉` positions at one level, drawn without replacement.
pub fn sample_group_mask(len: usize, ratio: f64, level: Level, seed: u64) -> Result<MaskPattern> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_group_mask_with(len, ratio, level, &mut rng)
}

pub fn sample_group_mask_with(len: usize, ratio: f64, level: Level, rng: &mut impl rand::Rng) -> Result<MaskPattern> {
    if !(0.0..=1.0).contains(&ratio) {
        bail!(Config, "mask ratio {ratio} outside [0, 1]");
    }
    let count = ((ratio * len as f64).ceil() as usize).min(len);
    let mut mask = MaskPattern::none(len);
    for t in sample(rng, len, count) {
        mask.set(t, level, true);
    }
    Ok(mask)
}

/// Coarse positions left masked after iteration `n` of `n_c`.
pub fn schedule_keep_count(n: usize, n_c: usize, len: usize) -> Result<usize> {
    if n_c == 0 || n == 0 || n > n_c {
        bail!(Contract, "iteration {n} outside 1..={n_c}");
    }
    if n == n_c {
        return Ok(0);
    }
    let x = len as f64 * (std::f64::consts::PI * n as f64 / (2.0 * n_c as f64)).cos();
    // cos(π/3) evaluates to 0.5000000000000001; don't let that round up a whole position
    Ok((x - 1e-9).ceil().max(0.0) as usize)
}
