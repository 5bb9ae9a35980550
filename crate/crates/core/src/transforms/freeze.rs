//! Freezing factor layers and refitting what remains.
//!
//! With `first` and `last` held fixed, the best core in Frobenius norm is
//! `W ×_C first⁺ ×_S (lastᵀ)⁺`. For orthonormal factors the pseudo-inverses
//! are plain transposes; otherwise they come from the normal equations.

use super::TransformError;
use crate::decompose::{project_core, SvdFactors, TuckerFactors};
use crate::planner::{recompute, CompressionPlan, Decision};
use crate::tensor::{cholesky_solve, mode_product, Matrix, Mode, Tensor4, TensorError};

/// Mask for SVD layers: `W0` frozen, `W1` refit.
pub const SVD_FREEZE_MASK: [bool; 2] = [true, false];
/// Mask for Tucker layers: `first` and `last` frozen, core refit.
pub const TUCKER_FREEZE_MASK: [bool; 3] = [true, false, true];

const ORTHONORMAL_TOL: f64 = 1e-10;

/// `(AᵀA)⁻¹Aᵀ` for a tall, full-column-rank `a`.
fn left_pinv(a: &Matrix) -> Result<Matrix, TransformError> {
    let at = a.transpose();
    let gram = at.matmul(a)?;
    cholesky_solve(&gram, &at).map_err(|e| match e {
        TensorError::Singular => TransformError::Singular(format!(
            "{}x{} factor is rank deficient",
            a.rows(),
            a.cols()
        )),
        other => other.into(),
    })
}

/// Refits the core of `f` against `w` with `first` and `last` fixed.
pub fn freeze_and_refit(w: &Tensor4, f: &TuckerFactors) -> Result<TuckerFactors, TransformError> {
    let [c, s, h, k] = w.dims();
    let [_, _, fh, fk] = f.core.dims();
    if f.first.rows() != c || f.last.cols() != s || (h, k) != (fh, fk) {
        return Err(TransformError::Dimension(format!(
            "factors for {:?} do not fit weight {:?}",
            [f.first.rows(), f.last.cols(), fh, fk],
            w.dims()
        )));
    }
    let orthonormal = f.first.orthonormality_defect() <= ORTHONORMAL_TOL
        && f.last.transpose().orthonormality_defect() <= ORTHONORMAL_TOL;
    let core = if orthonormal {
        project_core(w, &f.first, &f.last)?
    } else {
        let first_pinv = left_pinv(&f.first)?;
        let last_pinv = left_pinv(&f.last.transpose())?;
        let t = mode_product(w, &first_pinv, Mode::C)?;
        mode_product(&t, &last_pinv, Mode::S)?
    };
    Ok(TuckerFactors {
        first: f.first.clone(),
        core,
        last: f.last.clone(),
    })
}

/// Keeps `W0` and refits `W1 = (W0ᵀW0)⁻¹W0ᵀW`.
pub fn freeze_svd_and_refit(w: &Matrix, f: &SvdFactors) -> Result<SvdFactors, TransformError> {
    if f.w0.rows() != w.rows() || f.w1.cols() != w.cols() {
        return Err(TransformError::Dimension(format!(
            "factors {}x{} · {}x{} do not fit {}x{}",
            f.w0.rows(),
            f.w0.cols(),
            f.w1.rows(),
            f.w1.cols(),
            w.rows(),
            w.cols()
        )));
    }
    Ok(SvdFactors {
        w0: f.w0.clone(),
        w1: left_pinv(&f.w0)?.matmul(w)?,
    })
}

/// Marks every factorized layer as frozen.
pub fn freeze_plan(plan: &CompressionPlan) -> CompressionPlan {
    let mut out = plan.clone();
    for e in &mut out.entries {
        let mask = match e.decision {
            Decision::Svd { .. } => SVD_FREEZE_MASK.to_vec(),
            Decision::Tucker { .. } => TUCKER_FREEZE_MASK.to_vec(),
            _ => continue,
        };
        let base = e.decision.factorization().expect("factorized decision");
        e.set_decision(Decision::Frozen { base, mask });
    }
    out.totals = recompute(&out.entries);
    out.transform = "freeze".into();
    out
}
