//! Branched Tucker: splitting `(r1, r2)` into `N` branches of rank
//! `(r1/N, r2/N)` and running them as one grouped convolution.
//!
//! Branch `j` keeps the `j`-th contiguous block of `first` columns, the
//! `(j, j)` diagonal block of the core, and the `j`-th block of `last` rows.
//! The off-diagonal core blocks couple different branches and have no place
//! in this structure, so the branch sum reproduces the vanilla factors
//! exactly only when those blocks are zero (see [`block_diagonal_core`]).

use super::TransformError;
use crate::decompose::TuckerFactors;
use crate::nn::{ConvLayer, StackLayer};
use crate::planner::{quantize_rank, recompute, CompressionPlan, Decision};
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub struct BranchedTucker {
    pub branches: Vec<TuckerFactors>,
}

impl BranchedTucker {
    pub fn n(&self) -> usize {
        self.branches.len()
    }

    /// Per-branch ranks `(R1, R2)`.
    pub fn branch_ranks(&self) -> (usize, usize) {
        self.branches[0].ranks()
    }

    /// `Σ_j core_j ×_C first_j ×_S last_jᵀ`
    pub fn reconstruct_sum(&self) -> Tensor4 {
        let mut parts = self.branches.iter().map(TuckerFactors::reconstruct);
        let first = parts.next().expect("at least one branch");
        parts.fold(first, |acc, p| acc.add(&p).expect("branches share shape"))
    }

    /// One sequential stack per branch; the bias rides on branch 0.
    pub fn branch_stacks(
        &self,
        stride: usize,
        padding: usize,
        bias: Option<&[f64]>,
    ) -> Vec<Vec<StackLayer>> {
        self.branches
            .iter()
            .enumerate()
            .map(|(j, f)| tucker_stack(f, stride, padding, 1, if j == 0 { bias } else { None }))
            .collect()
    }
}

fn tucker_stack(
    f: &TuckerFactors,
    stride: usize,
    padding: usize,
    groups: usize,
    bias: Option<&[f64]>,
) -> Vec<StackLayer> {
    let conv = |weight: Tensor4, stride, padding, groups, bias: Option<&[f64]>| {
        StackLayer::Conv(ConvLayer {
            weight,
            bias: bias.map(<[f64]>::to_vec),
            stride,
            padding,
            groups,
        })
    };
    vec![
        conv(Tensor4::from_matrix(&f.first), 1, 0, 1, None),
        conv(f.core.clone(), stride, padding, groups, None),
        conv(Tensor4::from_matrix(&f.last), 1, 0, 1, bias),
    ]
}

/// Splits `f` into `n` contiguous branches.
pub fn branch_tucker(f: &TuckerFactors, n: usize) -> Result<BranchedTucker, TransformError> {
    if n == 0 {
        return Err(TransformError::ZeroBranches);
    }
    let (r1, r2) = f.ranks();
    if r1 % n != 0 || r2 % n != 0 {
        return Err(TransformError::Indivisible { n, r1, r2 });
    }
    let (b1, b2) = (r1 / n, r2 / n);
    let branches = (0..n)
        .map(|j| {
            Ok(TuckerFactors {
                first: f.first.columns(j * b1..(j + 1) * b1)?,
                core: f
                    .core
                    .channel_block(j * b1..(j + 1) * b1, j * b2..(j + 1) * b2)?,
                last: f.last.row_block(j * b2..(j + 1) * b2)?,
            })
        })
        .collect::<Result<Vec<_>, TransformError>>()?;
    Ok(BranchedTucker { branches })
}

/// `f` with every core block outside the `n` diagonal blocks set to zero.
pub fn block_diagonal_core(f: &TuckerFactors, n: usize) -> Result<TuckerFactors, TransformError> {
    if n == 0 {
        return Err(TransformError::ZeroBranches);
    }
    let (r1, r2) = f.ranks();
    if r1 % n != 0 || r2 % n != 0 {
        return Err(TransformError::Indivisible { n, r1, r2 });
    }
    let (b1, b2) = (r1 / n, r2 / n);
    let core = Tensor4::from_fn(f.core.dims(), |[a, b, i, j]| {
        if a / b1 == b / b2 {
            f.core.get(a, b, i, j)
        } else {
            0.0
        }
    })?;
    Ok(TuckerFactors {
        first: f.first.clone(),
        core,
        last: f.last.clone(),
    })
}

/// The branches as one `1×1 → grouped k×k → 1×1` stack.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedConvStack {
    /// `C × N·R1`
    pub first: Matrix,
    /// Grouped weight `(R1, N·R2, k, k)`.
    pub core: Tensor4,
    /// `N·R2 × S`
    pub last: Matrix,
    pub groups: usize,
}

impl GroupedConvStack {
    pub fn core_param_count(&self) -> usize {
        self.core.data().len()
    }

    pub fn to_stack(&self, stride: usize, padding: usize, bias: Option<&[f64]>) -> Vec<StackLayer> {
        let f = TuckerFactors {
            first: self.first.clone(),
            core: self.core.clone(),
            last: self.last.clone(),
        };
        tucker_stack(&f, stride, padding, self.groups, bias)
    }

    /// Splits the grouped form back into its branches.
    pub fn to_branched(&self) -> Result<BranchedTucker, TransformError> {
        let n = self.groups;
        let [r1, nr2, _, _] = self.core.dims();
        if n == 0 || nr2 % n != 0 || self.first.cols() != n * r1 || self.last.rows() != nr2 {
            return Err(TransformError::Dimension(format!(
                "grouped stack C x {} -> {:?} -> {} x S with {n} groups",
                self.first.cols(),
                self.core.dims(),
                self.last.rows()
            )));
        }
        let r2 = nr2 / n;
        let branches = (0..n)
            .map(|j| {
                Ok(TuckerFactors {
                    first: self.first.columns(j * r1..(j + 1) * r1)?,
                    core: self.core.channel_block(0..r1, j * r2..(j + 1) * r2)?,
                    last: self.last.row_block(j * r2..(j + 1) * r2)?,
                })
            })
            .collect::<Result<Vec<_>, TransformError>>()?;
        Ok(BranchedTucker { branches })
    }
}

pub fn branched_to_grouped(b: &BranchedTucker) -> Result<GroupedConvStack, TransformError> {
    let n = b.n();
    let (r1, r2) = b.branch_ranks();
    let [_, _, kh, kw] = b.branches[0].core.dims();
    let first = Matrix::hstack(
        &b.branches
            .iter()
            .map(|f| f.first.clone())
            .collect::<Vec<_>>(),
    )?;
    let last = Matrix::vstack(
        &b.branches
            .iter()
            .map(|f| f.last.clone())
            .collect::<Vec<_>>(),
    )?;
    // Output channel g·R2 + q of group g reads its branch's core column q.
    let core = Tensor4::from_fn([r1, n * r2, kh, kw], |[c, s, i, j]| {
        b.branches[s / r2].core.get(c, s % r2, i, j)
    })?;
    Ok(GroupedConvStack {
        first,
        core,
        last,
        groups: n,
    })
}

/// Turns every Tucker decision into `n` branches, quantizing both ranks to
/// multiples of `n` (upwards unless that exceeds the channel count).
pub fn branch_plan(plan: &CompressionPlan, n: usize) -> Result<CompressionPlan, TransformError> {
    if n == 0 {
        return Err(TransformError::ZeroBranches);
    }
    let mut out = plan.clone();
    for e in &mut out.entries {
        let Decision::Tucker { r1, r2 } = e.decision else {
            continue;
        };
        match (
            quantize_rank(r1, n, e.spec.in_channels),
            quantize_rank(r2, n, e.spec.out_channels),
        ) {
            (Some(q1), Some(q2)) => e.set_decision(Decision::Branched {
                r1: q1,
                r2: q2,
                branches: n,
            }),
            _ => e.warnings.push(format!(
                "ranks ({r1}, {r2}) cannot be split into {n} branches; kept as Tucker"
            )),
        }
    }
    out.totals = recompute(&out.entries);
    out.transform = format!("branch{n}");
    Ok(out)
}
