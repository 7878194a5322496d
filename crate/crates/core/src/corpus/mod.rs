//! Ingestion of word vectors, image features, triplet datasets and answer
//! similarity scores; answer vocabularies and cross-dataset overlap; the
//! deterministic synthetic corpus generator.
//!
//! Everything here is immutable after construction.

mod dataset;
mod embeddings;
mod features;
mod similarity;
mod synth;
mod text;
mod vocab;

pub use dataset::{
    load_dataset, parse_triplets, read_dataset, write_triplets, Dataset, Split, Triplet,
};
pub use embeddings::{load_word_embeddings, parse_word_embeddings, write_word_embeddings, WordEmbeddingTable};
pub use features::{load_features, parse_features, write_features, FeatureStore};
pub use similarity::{load_similarity_table, parse_similarity_table, SimilarityTable};
pub use synth::{generate_synthetic, SynthSpec, SyntheticCorpus};
pub use text::{normalize_answer, tokenize};
pub use vocab::{answer_overlap_stats, build_answer_vocabulary, AnswerVocabulary, OverlapStats};

use crate::error::{Error, Result};
use std::path::Path;

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn source_name(path: &Path) -> String {
    path.display().to_string()
}
