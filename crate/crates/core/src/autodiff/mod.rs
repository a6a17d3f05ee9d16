//! Reverse-mode automatic differentiation over dense tensors, plus Adam.

pub mod adam;
pub mod gradcheck;
pub mod kernels;
mod params;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{
    finite_diff_check, finite_diff_check_many, finite_diff_check_params, finite_diff_report_many,
    finite_diff_report_params, FdReport,
};
pub use params::{
    clip_grad_norm, collect_grads, freeze, grad_norm, param_count, snapshot, zero_grads,
    Parameters,
};
pub use tape::{Binary, Tape, Unary, Var, NORM_EPS};
pub use tensor::{Real, Tensor};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AdError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("{op}: domain violation: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("{op}: index {index} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("backward requires a single-element loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("parameter {0} has no gradient")]
    MissingGrad(String),
    #[error("optimizer state does not match parameters: {0}")]
    StateMismatch(String),
}
