//! Text and semantic prompt to semantic tokens with a token transducer.
//!
//! The lattice recursion runs on graph ops, so its gradient comes from the
//! same backward sweep as every other layer.

mod decode;
pub mod lattice;
mod model;
mod train;

#[cfg(test)]
mod tests;

pub use decode::{greedy_search, GreedyTrace};
pub use lattice::{remove_blanks, AlignmentPath, Step};
pub use model::{Example, InterpreterConfig, LatticeBatch, RefEmbedding, TransducerModel, Variant};
pub use train::{example_from, paired_examples, train_interpreter, PromptIndex};
