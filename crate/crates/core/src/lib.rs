//! Factorized answer embeddings for question answering over featurized
//! inputs.
//!
//! A joint embedding `f(i, q)` of an image feature and a question is scored
//! against answer embeddings `g(a)` by inner product; a softmax over those
//! scores gives the answer posterior. Training maximizes a weighted
//! likelihood over per-batch answer universes augmented with sampled
//! negatives. Because `g` only sees answer text, answers never seen in
//! training can still be embedded and ranked, which is what makes transfer
//! across datasets with different answer vocabularies work.
//!
//! Two baselines share the machinery: a multi-way classifier (`cls`) over the
//! top-K training answers and an unfactorized scorer `h(i, q, a)` (`upmc`).

pub mod cli;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluator;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod trainer;

pub use error::{Error, Result};
