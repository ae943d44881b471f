use crate::error::{bail, Result};

/// Outcome of a greedy lattice walk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreedyTrace {
    pub tokens: Vec<usize>,
    /// Frames advanced; always equals the number of text frames.
    pub blanks: usize,
    /// Blanks taken because a frame hit the emission cap.
    pub forced_blanks: usize,
    /// Times the scorer was consulted.
    pub evaluations: usize,
}

/// Walks the lattice taking the argmax at every node (ties go to the lowest
/// id). `score(t, prefix)` returns logits whose last entry is the blank.
pub fn greedy_search(
    frames: usize,
    blank: usize,
    cap: usize,
    mut score: impl FnMut(usize, &[usize]) -> Result<Vec<f64>>,
) -> Result<GreedyTrace> {
    if frames == 0 {
        bail!(Input, "greedy search over zero frames");
    }
    if cap == 0 {
        bail!(Config, "max_symbols_per_frame must be at least 1");
    }
    let mut trace = GreedyTrace {
        tokens: Vec::new(),
        blanks: 0,
        forced_blanks: 0,
        evaluations: 0,
    };
    for t in 0..frames {
        let mut emitted = 0;
        loop {
            if emitted == cap {
                trace.forced_blanks += 1;
                break;
            }
            let logits = score(t, &trace.tokens)?;
            trace.evaluations += 1;
            if logits.len() != blank + 1 {
                bail!(
                    Dimension,
                    "scorer returned {} logits, expected {}",
                    logits.len(),
                    blank + 1
                );
            }
            let best = super::model::TransducerModel::argmax(&logits);
            if best == blank {
                break;
            }
            trace.tokens.push(best);
            emitted += 1;
        }
        trace.blanks += 1;
    }
    Ok(trace)
}
