//! A two-stage token cascade for speech synthesis on a synthetic corpus:
//! a transducer maps text and a semantic prompt to semantic tokens, and a
//! grouped masked token model maps those plus an acoustic prompt to
//! codec-style acoustic tokens.

pub mod cli;
pub mod error;
pub mod evalbench;
pub mod grvq;
pub mod interpreting;
pub mod numerics;
pub mod speaking;
pub mod tokens;
pub mod toyworld;
pub mod training;

pub use error::{Error, Result};
