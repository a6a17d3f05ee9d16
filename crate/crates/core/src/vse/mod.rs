//! Multi-level visual-semantic embedding: image-sentence and image-concept
//! matching trained with a max-violating ranking loss.

mod concepts;
mod encoders;
mod loss;
mod train;

pub use concepts::ConceptVocabulary;
pub use encoders::{
    cosine_sim, ConceptEmbedding, ConceptVse, ImageEncoder, ImageVars, SentenceEncoder, SentenceVars,
    SentenceVse,
};
pub use loss::{contrastive_from_sims, contrastive_loss, recall_at_k, MARGIN};
pub use train::{
    concept_batch_loss, sentence_batch_loss, sentence_sim_matrix, train_concept_vse,
    train_sentence_vse, ConceptExample, SentenceExample, TrainHistory, VseConfig,
};
