//! Grouped residual vector quantization.
//!
//! A feature vector is split into `groups` equal slices; each slice goes
//! through a cascade of `depths` codebooks, every level quantizing what the
//! previous levels left over. Codeword 0 of every residual level (depth ≥ 1)
//! is pinned to the zero vector, so adding a level can never move a
//! reconstruction further from its input.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::tokens::{AcousticTokenFrame, DEPTHS, GROUPS};

pub const KMEANS_ITERATIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebooks {
    pub groups: usize,
    pub depths: usize,
    pub codebook_size: usize,
    pub feat_dim: usize,
    pub seed: u64,
    /// `tables[group * depths + depth]`, row-major `codebook_size × sub_dim`.
    pub tables: Vec<Vec<f64>>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest row of `table` to `x`; ties go to the lowest index.
fn nearest(table: &[f64], dim: usize, x: &[f64]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, row) in table.chunks(dim).enumerate() {
        let d = sq_dist(row, x);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding; empty clusters move to the point
/// currently farthest from its centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, rng: &mut impl Rng) -> Vec<f64> {
    let dim = points[0].len();
    let mut centroids: Vec<f64> = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(&points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut idx = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    idx = i;
                    break;
                }
                target -= d;
            }
            idx
        } else {
            rng.random_range(0..points.len())
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick]);
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &centroids[start..start + dim]));
        }
    }

    let mut assign = vec![0usize; points.len()];
    for _ in 0..iterations {
        for (p, a) in points.iter().zip(assign.iter_mut()) {
            *a = nearest(&centroids, dim, p);
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            sums[a * dim..(a + 1) * dim]
                .iter_mut()
                .zip(p)
                .for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assign[i] * dim..(assign[i] + 1) * dim])))
                    .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best })
                    .0;
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far]);
                assign[far] = c;
            }
        }
    }
    centroids
}

pub fn fit_codebooks(
    features: &[Vec<f64>],
    groups: usize,
    depths: usize,
    codebook_size: usize,
    seed: u64,
) -> Result<Codebooks> {
    if groups == 0 || depths == 0 || codebook_size == 0 {
        bail!(Config, "groups, depths and codebook size must be positive");
    }
    let Some(first) = features.first() else {
        bail!(Data, "no features");
    };
    let feat_dim = first.len();
    if feat_dim == 0 || feat_dim % groups != 0 {
        bail!(Config, "feature dimension {feat_dim} not divisible by {groups} groups");
    }
    if features.iter().any(|f| f.len() != feat_dim) {
        bail!(Dimension, "features of unequal dimension");
    }
    if features.len() < codebook_size {
        bail!(Data, "{} features cannot fit {codebook_size} codewords", features.len());
    }
    let sub = feat_dim / groups;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tables = vec![Vec::new(); groups * depths];
    for g in 0..groups {
        let mut residual: Vec<Vec<f64>> = features.iter().map(|f| f[g * sub..(g + 1) * sub].to_vec()).collect();
        for d in 0..depths {
            let table = if d == 0 {
                kmeans(&residual, codebook_size, KMEANS_ITERATIONS, &mut rng)
            } else {
                let mut t = vec![0.0; sub];
                if codebook_size > 1 {
                    t.extend(kmeans(&residual, codebook_size - 1, KMEANS_ITERATIONS, &mut rng));
                }
                t
            };
            for r in residual.iter_mut() {
                let c = nearest(&table, sub, r);
                r.iter_mut()
                    .zip(&table[c * sub..(c + 1) * sub])
                    .for_each(|(x, y)| *x -= y);
            }
            tables[g * depths + d] = table;
        }
    }
    Ok(Codebooks {
        groups,
        depths,
        codebook_size,
        feat_dim,
        seed,
        tables,
    })
}

impl Codebooks {
    pub fn sub_dim(&self) -> usize {
        self.feat_dim / self.groups
    }

    pub fn table(&self, group: usize, depth: usize) -> &[f64] {
        &self.tables[group * self.depths + depth]
    }

    pub fn codeword(&self, group: usize, depth: usize, index: usize) -> &[f64] {
        let s = self.sub_dim();
        &self.table(group, depth)[index * s..(index + 1) * s]
    }

    /// Codes for every (group, depth), `codes[group][depth]`.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<Vec<usize>>> {
        if x.len() != self.feat_dim {
            bail!(
                Dimension,
                "feature of dimension {} for codebooks of {}",
                x.len(),
                self.feat_dim
            );
        }
        let s = self.sub_dim();
        let mut codes = vec![vec![0; self.depths]; self.groups];
        for (g, group_codes) in codes.iter_mut().enumerate() {
            let mut r = x[g * s..(g + 1) * s].to_vec();
            for (d, code) in group_codes.iter_mut().enumerate() {
                *code = nearest(self.table(g, d), s, &r);
                r.iter_mut().zip(self.codeword(g, d, *code)).for_each(|(a, b)| *a -= b);
            }
        }
        Ok(codes)
    }

    /// Reconstruction from codes, using only the first `levels` depths.
    pub fn decode_levels(&self, codes: &[Vec<usize>], levels: usize) -> Result<Vec<f64>> {
        if codes.len() != self.groups || codes.iter().any(|c| c.len() != self.depths) {
            bail!(
                Dimension,
                "code layout does not match {}x{} codebooks",
                self.groups,
                self.depths
            );
        }
        let s = self.sub_dim();
        let mut out = vec![0.0; self.feat_dim];
        for (g, gc) in codes.iter().enumerate() {
            for (d, &c) in gc.iter().enumerate().take(levels) {
                if c >= self.codebook_size {
                    bail!(Index, "code {c} outside codebook of {}", self.codebook_size);
                }
                out[g * s..(g + 1) * s]
                    .iter_mut()
                    .zip(self.codeword(g, d, c))
                    .for_each(|(o, w)| *o += w);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, codes: &[Vec<usize>]) -> Result<Vec<f64>> {
        self.decode_levels(codes, self.depths)
    }

    fn check_frame_layout(&self) -> Result<()> {
        if self.groups != GROUPS || self.depths != DEPTHS {
            bail!(
                Config,
                "frame codec needs {GROUPS}x{DEPTHS} codebooks, have {}x{}",
                self.groups,
                self.depths
            );
        }
        Ok(())
    }

    pub fn encode_frame(&self, x: &[f64]) -> Result<AcousticTokenFrame> {
        self.check_frame_layout()?;
        let codes = self.encode(x)?;
        let mut frame = AcousticTokenFrame::default();
        for g in 0..GROUPS {
            for d in 0..DEPTHS {
                frame.codes[g][d] = codes[g][d];
            }
        }
        Ok(frame)
    }

    pub fn decode_frame(&self, frame: &AcousticTokenFrame) -> Result<Vec<f64>> {
        self.check_frame_layout()?;
        let codes: Vec<Vec<usize>> = frame.codes.iter().map(|g| g.to_vec()).collect();
        self.decode(&codes)
    }

    /// Mean squared reconstruction error per depth level (index `d` uses depths `0..=d`).
    pub fn mse_by_depth(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        let mut mse = vec![0.0; self.depths];
        for x in features {
            let codes = self.encode(x)?;
            for (level, m) in mse.iter_mut().enumerate() {
                let rec = self.decode_levels(&codes, level + 1)?;
                *m += sq_dist(x, &rec) / self.feat_dim as f64;
            }
        }
        mse.iter_mut().for_each(|m| *m /= features.len().max(1) as f64);
        Ok(mse)
    }
}

/// Gaussian-mixture frames for codebook fitting; deterministic in `seed`.
pub fn synthetic_features(n: usize, dim: usize, clusters: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand_distr::{Distribution, Normal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.35).expect("valid std");
    let centers: Vec<Vec<f64>> = (0..clusters.max(1))
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.random_range(0..centers.len())];
            c.iter().map(|v| v + noise.sample(&mut rng)).collect()
        })
        .collect()
}
