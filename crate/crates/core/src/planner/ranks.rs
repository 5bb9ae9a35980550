//! Closed-form ranks for a target compression ratio.
//!
//! Both formulas return the largest rank whose factor parameter count stays
//! within `original / alpha`. The float root is only a starting point; the
//! final rank is settled by integer parameter counts, so the floor property
//! holds exactly.

use super::PlanError;

fn check_alpha(alpha: f64) -> Result<(), PlanError> {
    if alpha.is_finite() && alpha > 1.0 {
        Ok(())
    } else {
        Err(PlanError::InvalidAlpha(alpha))
    }
}

fn within(params: u64, budget: f64) -> bool {
    params as f64 <= budget
}

fn svd_params(c: usize, s: usize, r: usize) -> u64 {
    (r * (c + s)) as u64
}

/// `C·r1 + r1·r2·k² + r2·S`
pub fn tucker_params(c: usize, s: usize, k: usize, r1: usize, r2: usize) -> u64 {
    (c * r1 + r1 * r2 * k * k + r2 * s) as u64
}

/// `R = ⌊C·S / (α·(C+S))⌋`.
pub fn svd_rank_for_ratio(c: usize, s: usize, alpha: f64) -> Result<usize, PlanError> {
    check_alpha(alpha)?;
    let budget = (c * s) as f64 / alpha;
    let mut r = (budget / (c + s) as f64).floor().max(0.0) as usize;
    while within(svd_params(c, s, r + 1), budget) {
        r += 1;
    }
    while r > 0 && !within(svd_params(c, s, r), budget) {
        r -= 1;
    }
    if r == 0 {
        return Err(PlanError::Unreachable {
            what: format!("svd {c}x{s} at alpha {alpha}"),
            rank: 0,
        });
    }
    Ok(r)
}

/// Positive root of `βk²r² + (C+βS)r − CSk²/α = 0`, floored, with
/// `r2 = round(β·r1)`.
pub fn tucker_ranks_for_ratio(
    c: usize,
    s: usize,
    k: usize,
    alpha: f64,
    beta: f64,
) -> Result<(usize, usize), PlanError> {
    check_alpha(alpha)?;
    if !(beta.is_finite() && beta > 0.0) {
        return Err(PlanError::InvalidBeta(beta));
    }
    let k2 = (k * k) as f64;
    let budget = (c * s * k * k) as f64 / alpha;
    let a = beta * k2;
    let b = c as f64 + beta * s as f64;
    let root = (-b + (b * b + 4.0 * a * budget).sqrt()) / (2.0 * a);
    let r2_of = |r1: usize| (beta * r1 as f64).round() as usize;
    let params = |r1: usize| tucker_params(c, s, k, r1, r2_of(r1));
    let mut r1 = root.floor().max(0.0) as usize;
    while within(params(r1 + 1), budget) {
        r1 += 1;
    }
    while r1 > 0 && !within(params(r1), budget) {
        r1 -= 1;
    }
    let r2 = r2_of(r1);
    if r1 == 0 || r2 == 0 {
        return Err(PlanError::Unreachable {
            what: format!("tucker {c}x{s}x{k}x{k} at alpha {alpha}, beta {beta}"),
            rank: r1.min(r2) as i64,
        });
    }
    Ok((r1, r2))
}

/// Rounds `rank` up to a multiple of `n`, or down when rounding up would
/// exceed `max`. `None` when no positive multiple fits.
pub fn quantize_rank(rank: usize, n: usize, max: usize) -> Option<usize> {
    if n == 0 || rank == 0 {
        return None;
    }
    let up = rank.div_ceil(n) * n;
    let q = if up <= max { up } else { rank.min(max) / n * n };
    (q > 0).then_some(q)
}
