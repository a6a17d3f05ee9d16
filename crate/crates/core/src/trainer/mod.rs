//! Pretraining phases, the self-critical reinforcement loop, evaluation and
//! run-directory management.

mod config;
mod eval;
mod experiment;
mod pipeline;

pub use config::{ExperimentConfig, Mode};
pub use eval::{evaluate_corpus, EvalReport, GroupScore, ItemScore};
pub use experiment::{
    make_dataset, render_table, report, run_experiment, run_mode, run_pretrain, run_train_lm, run_train_vse,
    ComparisonRow, RunDir,
};
pub use pipeline::{
    heldout_xe, pretrain_captioner, pretrain_lm, pretrain_vse, train_ssr, train_xe, Corpus, Frozen, RlEpoch,
    RlHistory, XeExample, XeOptions,
};
