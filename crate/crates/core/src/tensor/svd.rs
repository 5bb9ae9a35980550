//! Thin SVD by Householder QR followed by one-sided (Hestenes) Jacobi.
//!
//! Singular vectors follow a fixed sign convention: the first entry of each
//! `U` column with magnitude above [`SIGN_EPS`] is positive, and the paired
//! `V` column is flipped with it.

use super::{Matrix, Result, TensorError};

/// Upper bound on Jacobi sweeps before reporting non-convergence.
pub const SVD_MAX_SWEEPS: usize = 80;

const SIGN_EPS: f64 = 1e-12;
/// Singular values below `σ_max · NULL_RATIO` get a completed basis vector.
const NULL_RATIO: f64 = 1e-13;

/// `m = U · diag(sigma) · Vᵀ` with `U: m×r`, `V: n×r`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Keeps the leading `rank` triplets.
    pub fn truncate(&self, rank: usize) -> Result<SvdResult> {
        let max = self.sigma.len();
        if rank == 0 || rank > max {
            return Err(TensorError::RankOutOfRange { rank, max });
        }
        Ok(SvdResult {
            u: self.u.columns(0..rank)?,
            sigma: self.sigma[..rank].to_vec(),
            v: self.v.columns(0..rank)?,
        })
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = self.u.scale_columns(&self.sigma).expect("sigma matches U");
        us.matmul(&self.v.transpose()).expect("U and V share rank")
    }
}

/// Full thin SVD with `r = min(rows, cols)` triplets.
pub fn svd(m: &Matrix) -> Result<SvdResult> {
    if m.rows() == 0 || m.cols() == 0 {
        return Err(TensorError::Dimension("SVD of an empty matrix".into()));
    }
    let mut result = if m.rows() >= m.cols() {
        svd_tall(m)?
    } else {
        let t = svd_tall(&m.transpose())?;
        SvdResult {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        }
    };
    apply_sign_convention(&mut result);
    Ok(result)
}

/// Leading `rank` triplets of [`svd`].
pub fn truncated_svd(m: &Matrix, rank: usize) -> Result<SvdResult> {
    let max = m.rows().min(m.cols());
    if rank == 0 || rank > max {
        return Err(TensorError::RankOutOfRange { rank, max });
    }
    svd(m)?.truncate(rank)
}

/// Column-major working copy.
fn to_col_major(m: &Matrix) -> Vec<f64> {
    let (rows, cols) = (m.rows(), m.cols());
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = m.get(i, j);
        }
    }
    out
}

fn from_col_major(rows: usize, cols: usize, data: &[f64]) -> Matrix {
    let mut out = vec![0.0; rows * cols];
    for j in 0..cols {
        for i in 0..rows {
            out[i * cols + j] = data[j * rows + i];
        }
    }
    Matrix::from_raw(rows, cols, out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the loop vectorize.
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| x * y)
        .sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// SVD for `rows >= cols`.
fn svd_tall(m: &Matrix) -> Result<SvdResult> {
    let (rows, cols) = (m.rows(), m.cols());
    let a = to_col_major(m);
    if rows > cols {
        let (q, r) = householder_qr(&a, rows, cols);
        let inner = jacobi_svd(r, cols, cols)?;
        let u = from_col_major(rows, cols, &q).matmul(&inner.u)?;
        Ok(SvdResult {
            u,
            sigma: inner.sigma,
            v: inner.v,
        })
    } else {
        jacobi_svd(a, rows, cols)
    }
}

/// Thin QR of a column-major `rows × cols` matrix (`rows > cols`).
/// Returns `Q` (`rows × cols`, column-major) and `R` (`cols × cols`, column-major).
fn householder_qr(a: &[f64], rows: usize, cols: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = a.to_vec();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(cols);
    for k in 0..cols {
        let col = &a[k * rows + k..(k + 1) * rows];
        let norm = dot(col, col).sqrt();
        let mut v = col.to_vec();
        if norm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm == 0.0 {
            reflectors.push(Vec::new());
            continue;
        }
        for x in &mut v {
            *x /= vnorm;
        }
        for j in k..cols {
            let target = &mut a[j * rows + k..(j + 1) * rows];
            let proj = 2.0 * dot(&v, target);
            for (t, vi) in target.iter_mut().zip(&v) {
                *t -= proj * vi;
            }
        }
        reflectors.push(v);
    }

    let mut r = vec![0.0; cols * cols];
    for j in 0..cols {
        for i in 0..=j {
            r[j * cols + i] = a[j * rows + i];
        }
    }

    let mut q = vec![0.0; rows * cols];
    for j in 0..cols {
        q[j * rows + j] = 1.0;
    }
    for k in (0..cols).rev() {
        let v = &reflectors[k];
        if v.is_empty() {
            continue;
        }
        for j in 0..cols {
            let target = &mut q[j * rows + k..(j + 1) * rows];
            let proj = 2.0 * dot(v, target);
            for (t, vi) in target.iter_mut().zip(v) {
                *t -= proj * vi;
            }
        }
    }
    (q, r)
}

/// One-sided Jacobi on a column-major `rows × cols` matrix, `rows >= cols`.
fn jacobi_svd(mut a: Vec<f64>, rows: usize, cols: usize) -> Result<SvdResult> {
    let n = cols;
    let mut v = vec![0.0; n * n];
    for j in 0..n {
        v[j * n + j] = 1.0;
    }
    let tol = f64::EPSILON * (rows as f64);

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == SVD_MAX_SWEEPS {
            return Err(TensorError::NoConvergence { sweeps });
        }
        sweeps += 1;
        converged = true;
        // Squared column norms, refreshed every sweep and updated in closed
        // form after each rotation in between.
        let mut sq: Vec<f64> = (0..n)
            .map(|j| {
                let col = &a[j * rows..(j + 1) * rows];
                dot(col, col)
            })
            .collect();
        let null = sq.iter().fold(0.0f64, |m, &x| m.max(x)) * f64::EPSILON * f64::EPSILON;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let (ap, aq) = two_columns(&mut a, rows, p, q);
                let gamma = dot(ap, aq);
                if gamma == 0.0 || gamma.abs() <= tol * (sq[p] * sq[q]).sqrt() {
                    continue;
                }
                // Cached norms drift; rotate only on exact values.
                let (alpha, beta) = (dot(ap, ap), dot(aq, aq));
                if alpha <= null || beta <= null || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    sq[p] = alpha;
                    sq[q] = beta;
                    continue;
                }
                converged = false;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(ap, aq, c, s);
                sq[p] = (alpha - t * gamma).max(0.0);
                sq[q] = beta + t * gamma;
                let (vp, vq) = two_columns(&mut v, n, p, q);
                rotate(vp, vq, c, s);
            }
        }
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| {
            let col = &a[j * rows..(j + 1) * rows];
            dot(col, col).sqrt()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));
    let sigma_max = norms[order[0]];

    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sigma = Vec::with_capacity(n);
    let mut v_sorted = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        let col = &a[src * rows..(src + 1) * rows];
        let u = if s > 0.0 && s > sigma_max * NULL_RATIO {
            col.iter().map(|x| x / s).collect()
        } else {
            complete_basis(&u_cols, rows)
        };
        u_cols.push(u);
        sigma.push(s);
        v_sorted[dst * n..(dst + 1) * n].copy_from_slice(&v[src * n..(src + 1) * n]);
    }
    let u_flat: Vec<f64> = u_cols.into_iter().flatten().collect();
    Ok(SvdResult {
        u: from_col_major(rows, n, &u_flat),
        sigma,
        v: from_col_major(n, n, &v_sorted),
    })
}

fn two_columns(data: &mut [f64], rows: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = data.split_at_mut(q * rows);
    (&mut head[p * rows..(p + 1) * rows], &mut tail[..rows])
}

#[inline]
fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
        let (a, b) = (*xi, *yi);
        *xi = c * a - s * b;
        *yi = s * a + c * b;
    }
}

/// `m` (orthonormal columns) extended with further orthonormal columns up
/// to `cols` in total.
pub fn complete_columns(m: &Matrix, cols: usize) -> Result<Matrix> {
    let rows = m.rows();
    if cols > rows {
        return Err(TensorError::RankOutOfRange {
            rank: cols,
            max: rows,
        });
    }
    if cols <= m.cols() {
        return m.columns(0..cols);
    }
    let mut basis: Vec<Vec<f64>> = (0..m.cols()).map(|j| m.column(j)).collect();
    while basis.len() < cols {
        let next = complete_basis(&basis, rows);
        basis.push(next);
    }
    Matrix::from_fn(rows, cols, |i, j| basis[j][i])
}

/// Unit vector orthogonal to `basis`, built from the standard basis vector
/// with the largest residual.
fn complete_basis(basis: &[Vec<f64>], rows: usize) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in 0..rows {
        let mut r = vec![0.0; rows];
        r[i] = 1.0;
        for _ in 0..2 {
            for b in basis {
                let proj = dot(b, &r);
                for (ri, bi) in r.iter_mut().zip(b) {
                    *ri -= proj * bi;
                }
            }
        }
        let norm = dot(&r, &r).sqrt();
        if best.as_ref().is_none_or(|(n, _)| norm > *n + 1e-12) {
            best = Some((norm, r));
        }
    }
    let (norm, mut r) = best.expect("rows > 0");
    for x in &mut r {
        *x /= norm;
    }
    r
}

fn apply_sign_convention(result: &mut SvdResult) {
    let (m, n, r) = (result.u.rows(), result.v.rows(), result.sigma.len());
    let mut u = result.u.data().to_vec();
    let mut v = result.v.data().to_vec();
    for j in 0..r {
        let lead = (0..m).map(|i| u[i * r + j]).find(|x| x.abs() > SIGN_EPS);
        if matches!(lead, Some(x) if x < 0.0) {
            for i in 0..m {
                u[i * r + j] = -u[i * r + j];
            }
            for i in 0..n {
                v[i * r + j] = -v[i * r + j];
            }
        }
    }
    result.u = Matrix::from_raw(m, r, u);
    result.v = Matrix::from_raw(n, r, v);
}

/// Solves `g · x = b` for symmetric positive-definite `g` by Cholesky.
pub fn cholesky_solve(g: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = g.rows();
    if g.cols() != n || b.rows() != n {
        return Err(TensorError::Dimension(format!(
            "cholesky: {}x{} system with {}x{} right-hand side",
            g.rows(),
            g.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let scale = (0..n).map(|i| g.get(i, i).abs()).fold(0.0, f64::max);
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = g.get(i, j);
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if sum <= scale * 1e-13 || sum <= 0.0 {
                    return Err(TensorError::Singular);
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let k = b.cols();
    let mut x = b.data().to_vec();
    for col in 0..k {
        for i in 0..n {
            let mut sum = x[i * k + col];
            for p in 0..i {
                sum -= l[i * n + p] * x[p * k + col];
            }
            x[i * k + col] = sum / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = x[i * k + col];
            for p in i + 1..n {
                sum -= l[p * n + i] * x[p * k + col];
            }
            x[i * k + col] = sum / l[i * n + i];
        }
    }
    Ok(Matrix::from_raw(n, k, x))
}
