//! Rank selection and parameter/FLOP accounting.
//!
//! Counting conventions:
//!
//! * params of a layer: `C·S·k²/groups`, plus `S` when it carries a bias;
//! * FLOPs: `2 × multiply-accumulates = 2 · (C·S·k²/groups) · H_out · W_out`,
//!   weight layers only (no normalisation, activation or pooling cost);
//! * a linear layer has `H_out = W_out = 1`.

mod plan;
mod profile;
mod ranks;

pub use plan::{
    factor_specs, plan_model, recompute, CompressionPlan, Decision, Factorization, PlanEntry,
    Policy, RankRule, Totals,
};
pub use profile::{
    optimize_rank, profile_layer, NnProfiler, ProfileRecord, RankChoice, RankSearch,
    TimingProvider, MIN_REPS,
};
pub use ranks::{quantize_rank, svd_rank_for_ratio, tucker_params, tucker_ranks_for_ratio};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::conv_output_size;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlanError {
    #[error("compression ratio must be > 1, got {0}")]
    InvalidAlpha(f64),
    #[error("beta must be > 0, got {0}")]
    InvalidBeta(f64),
    #[error("target unreachable: rank {rank} < 1 for {what}")]
    Unreachable { what: String, rank: i64 },
    #[error("invalid layer '{name}': {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("model has no layers")]
    EmptyModel,
    #[error("rank window invalid: r_min {r_min} > r_init {r_init}")]
    RankWindow { r_min: usize, r_init: usize },
    #[error("timing provider failed for layer '{layer}': {reason}")]
    Timing { layer: String, reason: String },
    #[error("need at least {min} repetitions, got {reps}")]
    TooFewReps { reps: usize, min: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Linear,
}

/// Symbolic description of one weight layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub padding: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default)]
    pub has_bias: bool,
    /// Spatial size `[h, w]` of the layer input.
    pub input_hw: [usize; 2],
}

fn one() -> usize {
    1
}

impl LayerSpec {
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        input_hw: usize,
    ) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            groups: 1,
            has_bias: false,
            input_hw: [input_hw, input_hw],
        }
    }

    pub fn linear(name: &str, in_channels: usize, out_channels: usize, has_bias: bool) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Linear,
            in_channels,
            out_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
            groups: 1,
            has_bias,
            input_hw: [1, 1],
        }
    }

    pub fn validate(&self) -> Result<(), PlanError> {
        let fail = |reason: String| {
            Err(PlanError::InvalidSpec {
                name: self.name.clone(),
                reason,
            })
        };
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 || self.stride == 0 {
            return fail("channels, kernel and stride must be >= 1".into());
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return fail(format!(
                "groups {} must divide in_channels {} and out_channels {}",
                self.groups, self.in_channels, self.out_channels
            ));
        }
        if self.kind == LayerKind::Linear
            && (self.kernel != 1 || self.stride != 1 || self.padding != 0 || self.groups != 1)
        {
            return fail("linear layers have kernel 1, stride 1, padding 0, groups 1".into());
        }
        if self.kind == LayerKind::Conv && self.output_hw().is_none() {
            return fail(format!(
                "kernel {} does not fit input {:?}",
                self.kernel, self.input_hw
            ));
        }
        Ok(())
    }

    pub fn output_hw(&self) -> Option<[usize; 2]> {
        match self.kind {
            LayerKind::Linear => Some([1, 1]),
            LayerKind::Conv => Some([
                conv_output_size(self.input_hw[0], self.kernel, self.stride, self.padding)?,
                conv_output_size(self.input_hw[1], self.kernel, self.stride, self.padding)?,
            ]),
        }
    }

    /// Multiplicative weights `C·S·k²/groups`.
    pub fn weight_params(&self) -> u64 {
        (self.in_channels * self.out_channels * self.kernel * self.kernel / self.groups) as u64
    }

    /// Whether the layer is a channel-mixing matrix (linear or 1×1 conv).
    pub fn is_pointwise(&self) -> bool {
        self.kernel == 1
    }
}

pub fn layer_params(spec: &LayerSpec) -> u64 {
    spec.weight_params()
        + if spec.has_bias {
            spec.out_channels as u64
        } else {
            0
        }
}

pub fn layer_flops(spec: &LayerSpec) -> u64 {
    let [ho, wo] = spec.output_hw().unwrap_or([0, 0]);
    2 * spec.weight_params() * (ho * wo) as u64
}
