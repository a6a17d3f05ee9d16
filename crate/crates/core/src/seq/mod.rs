//! Vocabulary, captions, recurrent cells and the two generative models.

mod caption;
pub mod models;
pub mod rnn;
mod vocab;

pub use caption::Caption;
pub use models::{
    feature_batch, sequence_log_prob, teacher_forced, Captioner, CaptionerDims, DecoderCore,
    DecoderState, Dropout, LanguageModel, SequenceModel, TokenLogProbs, MASKED_LOGIT,
};
pub use rnn::{gru_step, lstm_step, GruParams, LstmParams};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

#[cfg(test)]
mod tests;
