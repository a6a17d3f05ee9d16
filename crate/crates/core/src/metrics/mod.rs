//! Corpus-level caption metrics: BLEU@1-4 and plain CIDEr.

mod bleu;
mod cider;

pub use bleu::{bleu, corpus_stats, NGramStats, MAX_ORDER};
pub use cider::{cider, CiderScorer};
