//! Synthetic micro-world: concept-composed image features, a toy grammar in
//! two surface languages and a noisy pseudo-translator between them.

mod dataset;
mod io;
mod noise;
mod world;

pub use dataset::{
    build_vocab, generate_corpus, generate_dataset, token_set, truncate_caption, truncate_tokens, Dataset,
    DatasetSizes, ImageRecord, PseudoPair, Split, PIVOT_MAX_LEN, TARGET_MAX_LEN, VOCAB_THRESHOLD,
};
pub use io::{parse_split, read_split, write_split};
pub use noise::{apply_disfluency, pseudo_translate, DisfluencyOp, NoiseFlags, NoiseSpec};
pub use world::{
    extract_concepts, extract_concepts_tagged, Category, Concept, MicroWorld, COMPANION_SALIENCE, Pos, Role, SceneContent, Slot,
    Template, WorldConfig,
};
