//! Corpus ingestion, vocabulary, deterministic splits, synthetic confused
//! corpora and group-aware label noise.

mod corpus;
mod embeddings;
mod noise;
mod split;
mod synth;
mod vocab;

pub use corpus::{
    encode_corpus, label_names_of, read_jsonl, write_jsonl, Dataset, Example, GroupMap, Input, InputKind, RawRecord,
};
pub use embeddings::load_pretrained_embeddings;
pub use noise::inject_label_noise;
pub use split::{split_dataset, split_indices};
pub use synth::{generate_confused_corpus, ConfusablePair, ConfusionSpec};
pub use vocab::{build_vocab, tokenize, Vocab, PAD_ID, UNK_ID};
