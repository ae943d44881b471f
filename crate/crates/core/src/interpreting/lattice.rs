//! Monotonic alignment lattice over `frames × (tokens + 1)` nodes.
//!
//! Node `(t, u)` means "at text frame `t`, `u` output tokens emitted". A blank
//! moves right to `(t + 1, u)`; emitting `s_{u+1}` moves up to `(t, u + 1)`.
//! Every complete path ends with a blank leaving the last frame, so a path
//! over `N` frames and `T` tokens has `N + T` steps and there are
//! `C(N + T - 1, T)` of them.
//!
//! Log-probabilities are laid out row-major: node `(t, u)` is row
//! `t·(T+1) + u` of a `[N·(T+1)] × V` table, with the blank at column `V-1`.

use crate::error::{bail, Result};
use crate::numerics::{logsumexp, Graph, NodeId};
use crate::tokens::SemanticSeq;

/// Largest `N + T` the path enumerator accepts.
pub const MAX_ENUMERATION: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Step {
    Emit(usize),
    Blank,
}

/// A monotone path through the lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AlignmentPath {
    pub steps: Vec<Step>,
}

impl AlignmentPath {
    pub fn blanks(&self) -> usize {
        self.steps.iter().filter(|s| matches!(s, Step::Blank)).count()
    }

    /// Lattice nodes visited before each step, paired with the step.
    pub fn nodes(&self) -> impl Iterator<Item = ((usize, usize), Step)> + '_ {
        let (mut t, mut u) = (0, 0);
        self.steps.iter().map(move |&s| {
            let here = (t, u);
            match s {
                Step::Blank => t += 1,
                Step::Emit(_) => u += 1,
            }
            (here, s)
        })
    }
}

/// Blank removal: the emitted tokens of a path, in order.
pub fn remove_blanks(path: &AlignmentPath) -> SemanticSeq {
    SemanticSeq::from_raw(
        path.steps
            .iter()
            .filter_map(|s| match s {
                Step::Emit(tok) => Some(*tok),
                Step::Blank => None,
            })
            .collect(),
    )
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Number of monotone paths for `frames ≥ 1` and `tokens ≥ 0`.
pub fn path_count(frames: usize, tokens: usize) -> u128 {
    binomial(frames + tokens - 1, tokens)
}

/// Every alignment of `target` over `frames` text frames.
pub fn enumerate_paths(frames: usize, target: &[usize]) -> Result<Vec<AlignmentPath>> {
    if frames == 0 {
        bail!(Input, "lattice needs at least one frame");
    }
    if frames + target.len() > MAX_ENUMERATION {
        bail!(
            Size,
            "N + T = {} exceeds enumeration bound {MAX_ENUMERATION}",
            frames + target.len()
        );
    }
    fn go(t: usize, u: usize, frames: usize, target: &[usize], prefix: &mut Vec<Step>, out: &mut Vec<AlignmentPath>) {
        if t == frames - 1 && u == target.len() {
            prefix.push(Step::Blank);
            out.push(AlignmentPath { steps: prefix.clone() });
            prefix.pop();
            return;
        }
        if u < target.len() {
            prefix.push(Step::Emit(target[u]));
            go(t, u + 1, frames, target, prefix, out);
            prefix.pop();
        }
        if t + 1 < frames {
            prefix.push(Step::Blank);
            go(t + 1, u, frames, target, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    go(0, 0, frames, target, &mut Vec::new(), &mut out);
    Ok(out)
}

/// Checks a log-prob table's shape against the lattice.
fn check_table(len: usize, frames: usize, target: &[usize], vocab: usize) -> Result<()> {
    if frames == 0 {
        bail!(Input, "lattice needs at least one frame");
    }
    if len != frames * (target.len() + 1) * vocab {
        bail!(
            Dimension,
            "log-prob table of {len} values for {frames} frames, {} tokens, vocab {vocab}",
            target.len()
        );
    }
    if let Some(&bad) = target.iter().find(|&&s| s + 1 >= vocab) {
        bail!(Index, "token {bad} is not a non-blank symbol of a {vocab}-way output");
    }
    Ok(())
}

/// Negative log-likelihood summed over all alignments, by explicit enumeration.
pub fn brute_force_nll(log_probs: &[f64], frames: usize, target: &[usize], vocab: usize) -> Result<f64> {
    check_table(log_probs.len(), frames, target, vocab)?;
    let width = target.len() + 1;
    let blank = vocab - 1;
    let scores: Vec<f64> = enumerate_paths(frames, target)?
        .iter()
        .map(|path| {
            path.nodes()
                .map(|((t, u), step)| {
                    let col = match step {
                        Step::Blank => blank,
                        Step::Emit(tok) => tok,
                    };
                    log_probs[(t * width + u) * vocab + col]
                })
                .sum()
        })
        .collect();
    Ok(-logsumexp(&scores))
}

/// Forward recursion on the graph. `log_probs` holds the lattice table for this
/// utterance starting at row `row_offset`; returns the scalar NLL node.
pub fn forward_nll(
    g: &mut Graph,
    log_probs: NodeId,
    row_offset: usize,
    frames: usize,
    target: &[usize],
    vocab: usize,
) -> Result<NodeId> {
    let width = target.len() + 1;
    let needed = (row_offset + frames * width) * vocab;
    if g.value(log_probs).len() < needed {
        bail!(Dimension, "log-prob table too small for lattice");
    }
    check_table(frames * width * vocab, frames, target, vocab)?;
    let blank = vocab - 1;
    let at = |t: usize, u: usize, col: usize| ((row_offset + t * width + u) * vocab) + col;

    // alpha[t][u] = log-prob of reaching node (t, u); None encodes log 1 at the origin.
    let mut alpha: Vec<Option<NodeId>> = vec![None; frames * width];
    let extend = |g: &mut Graph, from: Option<NodeId>, flat: usize| -> Result<NodeId> {
        let lp = g.index(log_probs, flat)?;
        Ok(match from {
            Some(a) => g.add(a, lp)?,
            None => lp,
        })
    };
    for t in 0..frames {
        for u in 0..width {
            if t == 0 && u == 0 {
                continue;
            }
            let right = if t > 0 {
                Some(extend(g, alpha[(t - 1) * width + u], at(t - 1, u, blank))?)
            } else {
                None
            };
            let up = if u > 0 {
                Some(extend(g, alpha[t * width + u - 1], at(t, u - 1, target[u - 1]))?)
            } else {
                None
            };
            alpha[t * width + u] = Some(match (right, up) {
                (Some(a), Some(b)) => g.log_add_exp(a, b)?,
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!(),
            });
        }
    }
    let total = extend(g, alpha[frames * width - 1], at(frames - 1, width - 1, blank))?;
    Ok(g.scale(total, -1.0))
}

/// NLL of `target` when at most `cap` tokens may be emitted per frame: once a
/// frame has emitted `cap` tokens the blank is taken with probability one.
/// This is the distribution greedy search with the same cap decodes from.
pub fn capped_nll(log_probs: &[f64], frames: usize, target: &[usize], vocab: usize, cap: usize) -> Result<f64> {
    check_table(log_probs.len(), frames, target, vocab)?;
    if cap == 0 {
        bail!(Config, "emission cap must be at least 1");
    }
    let width = target.len() + 1;
    let blank = vocab - 1;
    let lp = |t: usize, u: usize, col: usize| log_probs[(t * width + u) * vocab + col];
    let neg = f64::NEG_INFINITY;
    // alpha[u][k]: at the current frame, u tokens emitted overall, k in this frame.
    let mut alpha = vec![vec![neg; cap + 1]; width];
    alpha[0][0] = 0.0;
    for t in 0..frames {
        for u in 0..width {
            for k in 0..cap {
                let a = alpha[u][k];
                if a == neg || u + 1 >= width {
                    continue;
                }
                let next = a + lp(t, u, target[u]);
                let slot = &mut alpha[u + 1][k + 1];
                *slot = logsumexp(&[*slot, next]);
            }
        }
        let leave = |u: usize, k: usize, a: f64| if k == cap { a } else { a + lp(t, u, blank) };
        if t + 1 == frames {
            let finals: Vec<f64> = (0..=cap).map(|k| leave(width - 1, k, alpha[width - 1][k])).collect();
            return Ok(-logsumexp(&finals));
        }
        let mut next = vec![vec![neg; cap + 1]; width];
        for (u, row) in alpha.iter().enumerate() {
            let terms: Vec<f64> = (0..=cap).map(|k| leave(u, k, row[k])).collect();
            next[u][0] = logsumexp(&terms);
        }
        alpha = next;
    }
    unreachable!("frames >= 1")
}
