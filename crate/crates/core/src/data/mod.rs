//! Corpus ingestion, vocabulary, batching and the synthetic local-cue generator.

pub mod batch;
pub mod conll;
pub mod synthetic;
pub mod vocab;

pub use batch::{batchify, Batch};
pub use conll::{parse_conll, read_conll, write_conll, LabeledSequence};
pub use synthetic::{gen_splits, gen_synthetic};
pub use vocab::{build_vocab, Vocab};
