//! Acceleration transforms applied on top of a factorization: merging
//! adjacent 1×1 layers, freezing factors with a core refit, and splitting a
//! Tucker layer into grouped branches.

mod branch;
mod freeze;
mod merge;

pub use branch::{
    block_diagonal_core, branch_plan, branch_tucker, branched_to_grouped, BranchedTucker,
    GroupedConvStack,
};
pub use freeze::{
    freeze_and_refit, freeze_plan, freeze_svd_and_refit, SVD_FREEZE_MASK, TUCKER_FREEZE_MASK,
};
pub use merge::{merge_1x1, merge_plan, MergeOptions};

use thiserror::Error;

use crate::decompose::DecomposeError;
use crate::tensor::TensorError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("branch count {n} does not divide ranks ({r1}, {r2})")]
    Indivisible { n: usize, r1: usize, r2: usize },
    #[error("branch count must be >= 1")]
    ZeroBranches,
    #[error("least-squares refit is singular: {0}")]
    Singular(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Decompose(#[from] DecomposeError),
}
