//! Merging a 1×1 layer with an adjacent Tucker factor.
//!
//! In a bottleneck block `conv1 (1×1) → conv2 (k×k) → conv3 (1×1)`, Tucker
//! on `conv2` yields `first (1×1) → core → last (1×1)`. The pairs
//! `conv1, first` and `last, conv3` are each one matrix product apart, so the
//! block keeps its original depth.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::TransformError;
use crate::model::{ModelFile, Node, Role};
use crate::planner::{recompute, CompressionPlan, Decision, LayerKind};
use crate::tensor::Matrix;

/// `Wa · Wb`: the `C×S` weight of `Wb` applied after `Wa`.
pub fn merge_1x1(wa: &Matrix, wb: &Matrix) -> Result<Matrix, TransformError> {
    if wa.cols() != wb.rows() {
        return Err(TransformError::Dimension(format!(
            "cannot merge {}x{} with {}x{}",
            wa.rows(),
            wa.cols(),
            wb.rows(),
            wb.cols()
        )));
    }
    Ok(wa.matmul(wb)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOptions {
    /// Merge even when an activation separates the pair. The activation then
    /// runs after the merged layer instead, which changes the network
    /// function; each such merge is reported as a warning.
    pub across_activations: bool,
    /// Return every decomposed layer that took part in no merge to its
    /// original form.
    pub revert_unmerged: bool,
}

impl MergeOptions {
    /// Only pairs with nothing between them are merged.
    pub fn strict() -> Self {
        Self {
            across_activations: false,
            revert_unmerged: false,
        }
    }

    /// Bottleneck merging: the 1×1 convolutions absorb the Tucker factors of
    /// their neighbouring k×k layer across the block's activations, and only
    /// the k×k cores remain decomposed.
    pub fn layer_merging() -> Self {
        Self {
            across_activations: true,
            revert_unmerged: true,
        }
    }
}

/// Index of the node holding `name`.
fn node_index(model: &ModelFile, name: &str) -> Option<usize> {
    model
        .nodes
        .iter()
        .position(|n| matches!(n, Node::Layer(l) if l.spec.name == name))
}

/// The nearest main-path 1×1 conv reached from `start` walking by `dir`,
/// plus whether an activation was crossed.
fn neighbour(
    model: &ModelFile,
    start: usize,
    forward: bool,
    opts: MergeOptions,
) -> Option<(String, bool)> {
    let mut crossed = false;
    let mut i = start;
    loop {
        i = if forward {
            i.checked_add(1)?
        } else {
            i.checked_sub(1)?
        };
        match model.nodes.get(i)? {
            Node::Relu if opts.across_activations => crossed = true,
            Node::Layer(l) if l.role == Role::Shortcut => continue,
            Node::Layer(l) => {
                let s = &l.spec;
                let host = l.role == Role::Main
                    && s.kind == LayerKind::Conv
                    && s.kernel == 1
                    && s.groups == 1;
                return host.then(|| (s.name.clone(), crossed));
            }
            _ => return None,
        }
    }
}

/// Folds Tucker first/last factors into adjacent 1×1 convolutions.
///
/// Tucker entries without a mergeable neighbour are left unchanged (or
/// reverted, with `revert_unmerged`).
pub fn merge_plan(
    model: &ModelFile,
    plan: &CompressionPlan,
    opts: MergeOptions,
) -> Result<CompressionPlan, TransformError> {
    let mut out = plan.clone();
    let positions: HashMap<String, usize> = out
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.spec.name.clone(), i))
        .collect();
    let index = |name: &str| positions.get(name).copied();
    let mut merged = vec![false; out.entries.len()];

    let tuckers: Vec<(usize, usize, usize)> = out
        .entries
        .iter()
        .enumerate()
        .filter_map(|(i, e)| match e.decision {
            Decision::Tucker { r1, r2 } => Some((i, r1, r2)),
            _ => None,
        })
        .collect();

    for (ti, r1, r2) in tuckers {
        let name = out.entries[ti].spec.name.clone();
        let Some(pos) = node_index(model, &name) else {
            return Err(TransformError::Dimension(format!(
                "plan layer '{name}' not in model"
            )));
        };
        let before =
            neighbour(model, pos, false, opts).and_then(|(n, c)| index(&n).map(|i| (i, c)));
        let after = neighbour(model, pos, true, opts).and_then(|(n, c)| index(&n).map(|i| (i, c)));
        let usable = |slot: Option<(usize, bool)>| {
            slot.filter(|(i, _)| !matches!(out.entries[*i].decision, Decision::Tucker { .. }))
        };
        let before = usable(before);
        let after = usable(after);
        if before.is_none() && after.is_none() {
            continue;
        }
        let tucker_bias = out.entries[ti].spec.has_bias;

        if let Some((hi, crossed)) = before {
            let host = &out.entries[hi];
            let (in_c, absorbs_last, has_bias) = match &host.decision {
                Decision::MergedHost {
                    in_channels,
                    absorbs_last_of,
                    has_bias,
                    ..
                } => (*in_channels, absorbs_last_of.clone(), *has_bias),
                _ => (host.spec.in_channels, None, host.spec.has_bias),
            };
            let d = Decision::MergedHost {
                in_channels: in_c,
                out_channels: r1,
                has_bias,
                absorbs_last_of: absorbs_last,
                absorbs_first_of: Some(name.clone()),
            };
            let e = &mut out.entries[hi];
            e.set_decision(d);
            if crossed {
                e.warnings.push(format!(
                    "activation moved after merged layer (absorbs first factor of {name})"
                ));
            }
            merged[hi] = true;
        }
        if let Some((hi, crossed)) = after {
            let host = &out.entries[hi];
            let (out_c, absorbs_first, has_bias) = match &host.decision {
                Decision::MergedHost {
                    out_channels,
                    absorbs_first_of,
                    has_bias,
                    ..
                } => (*out_channels, absorbs_first_of.clone(), *has_bias),
                _ => (host.spec.out_channels, None, host.spec.has_bias),
            };
            let d = Decision::MergedHost {
                in_channels: r2,
                out_channels: out_c,
                has_bias: has_bias || tucker_bias,
                absorbs_last_of: Some(name.clone()),
                absorbs_first_of: absorbs_first,
            };
            let e = &mut out.entries[hi];
            e.set_decision(d);
            if crossed {
                e.warnings.push(format!(
                    "activation moved before merged layer (absorbs last factor of {name})"
                ));
            }
            merged[hi] = true;
        }
        out.entries[ti].set_decision(Decision::MergedCore {
            r1,
            r2,
            first_absorbed: before.is_some(),
            last_absorbed: after.is_some(),
        });
        merged[ti] = true;
    }

    if opts.revert_unmerged {
        for (e, m) in out.entries.iter_mut().zip(&merged) {
            if !m && e.decision != Decision::Passthrough {
                e.set_decision(Decision::Passthrough);
            }
        }
    }
    out.totals = recompute(&out.entries);
    out.transform = "merge".into();
    Ok(out)
}
