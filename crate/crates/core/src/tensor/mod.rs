//! Dense tensors and matrices used as the numerical substrate.
//!
//! A [`Tensor4`] holds a convolution weight with dimensions
//! `(C, S, h, w)`: input channels, output channels, kernel rows and kernel
//! columns, stored row-major. When `h == w == 1` the tensor is the `C × S`
//! matrix of a fully-connected or 1×1 convolution layer.
//!
//! Unfoldings follow one fixed layout:
//!
//! * C-mode: row `c` holds the entries ordered by `(s, kh, kw)`, so the
//!   unfolding is `C × (S·h·w)` and is a plain reshape of the storage.
//! * S-mode: row `s` holds the entries ordered by `(c, kh, kw)`, giving an
//!   `S × (C·h·w)` matrix.

pub mod io;
mod svd;

pub use svd::{cholesky_solve, complete_columns, svd, truncated_svd, SvdResult, SVD_MAX_SWEEPS};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("data length {len} does not match shape {shape:?}")]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("non-finite value {value} at flat index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("rank {rank} out of range 1..={max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("SVD did not converge after {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("singular system in least-squares solve")]
    Singular,
}

pub type Result<T> = std::result::Result<T, TensorError>;

fn check_finite(data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite {
            index,
            value: data[index],
        }),
        None => Ok(()),
    }
}

/// Shape and flat values of a dense array.
pub trait Dense {
    fn shape(&self) -> Vec<usize>;
    fn values(&self) -> &[f64];

    fn frobenius_norm(&self) -> f64 {
        self.values().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix", into = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = TensorError;
    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::new(raw.rows, raw.cols, raw.data)
    }
}

impl From<Matrix> for RawMatrix {
    fn from(m: Matrix) -> Self {
        RawMatrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data,
        }
    }
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(TensorError::LengthMismatch {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from values produced by arithmetic on finite inputs.
    pub(crate) fn from_raw(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::from_raw(rows, cols, vec![0.0; rows * cols])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        Self::from_fn(n, n, |i, j| if i == j { diag[i] } else { 0.0 })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = vec![0.0; self.data.len()];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        Matrix::from_raw(self.cols, self.rows, out)
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(TensorError::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let (m, k, n) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let out_row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * n..(p + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(Matrix::from_raw(m, n, out))
    }

    /// Columns `range` as a new matrix.
    pub fn columns(&self, range: std::ops::Range<usize>) -> Result<Matrix> {
        if range.end > self.cols || range.start > range.end {
            return Err(TensorError::Dimension(format!(
                "column range {range:?} outside {} columns",
                self.cols
            )));
        }
        let width = range.len();
        let mut out = Vec::with_capacity(self.rows * width);
        for i in 0..self.rows {
            out.extend_from_slice(&self.row(i)[range.clone()]);
        }
        Ok(Matrix::from_raw(self.rows, width, out))
    }

    /// Rows `range` as a new matrix.
    pub fn row_block(&self, range: std::ops::Range<usize>) -> Result<Matrix> {
        if range.end > self.rows || range.start > range.end {
            return Err(TensorError::Dimension(format!(
                "row range {range:?} outside {} rows",
                self.rows
            )));
        }
        let data = self.data[range.start * self.cols..range.end * self.cols].to_vec();
        Ok(Matrix::from_raw(range.len(), self.cols, data))
    }

    /// Multiplies column `j` by `scale[j]`.
    pub fn scale_columns(&self, scale: &[f64]) -> Result<Matrix> {
        if scale.len() != self.cols {
            return Err(TensorError::Dimension(format!(
                "{} column scales for {} columns",
                scale.len(),
                self.cols
            )));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(self.cols) {
            for (v, s) in row.iter_mut().zip(scale) {
                *v *= s;
            }
        }
        Ok(Matrix::from_raw(self.rows, self.cols, out))
    }

    /// Multiplies row `i` by `scale[i]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Result<Matrix> {
        if scale.len() != self.rows {
            return Err(TensorError::Dimension(format!(
                "{} row scales for {} rows",
                scale.len(),
                self.rows
            )));
        }
        let mut out = self.data.clone();
        for (row, s) in out.chunks_mut(self.cols).zip(scale) {
            for v in row {
                *v *= s;
            }
        }
        Ok(Matrix::from_raw(self.rows, self.cols, out))
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(TensorError::Dimension(format!(
                "cannot subtract {}x{} from {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix::from_raw(self.rows, self.cols, data))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn hstack(parts: &[Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if parts.iter().any(|m| m.rows != rows) {
            return Err(TensorError::Dimension("hstack: row counts differ".into()));
        }
        let cols: usize = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix::from_raw(rows, cols, data))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if parts.iter().any(|m| m.cols != cols) {
            return Err(TensorError::Dimension(
                "vstack: column counts differ".into(),
            ));
        }
        let rows = parts.iter().map(|m| m.rows).sum();
        let data = parts.iter().flat_map(|m| m.data.iter().copied()).collect();
        Ok(Matrix::from_raw(rows, cols, data))
    }

    /// Largest absolute deviation of `selfᵀ·self` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let gram = self.transpose().matmul(self).expect("square gram");
        let mut worst: f64 = 0.0;
        for i in 0..gram.rows {
            for j in 0..gram.cols {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram.get(i, j) - target).abs());
            }
        }
        worst
    }
}

impl Dense for Matrix {
    fn shape(&self) -> Vec<usize> {
        vec![self.rows, self.cols]
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Channel mode of a [`Tensor4`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    /// Input channels (axis 0).
    C,
    /// Output channels (axis 1).
    S,
}

/// Dense `C × S × h × w` tensor, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor", into = "RawTensor")]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawTensor {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor4 {
    type Error = TensorError;
    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor4::new(raw.dims, raw.data)
    }
}

impl From<Tensor4> for RawTensor {
    fn from(t: Tensor4) -> Self {
        RawTensor {
            dims: t.dims,
            data: t.data,
        }
    }
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(TensorError::LengthMismatch {
                shape: dims.to_vec(),
                len: data.len(),
            });
        }
        check_finite(&data)?;
        Ok(Self { dims, data })
    }

    pub(crate) fn from_raw(dims: [usize; 4], data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { dims, data }
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self::from_raw(dims, vec![0.0; dims.iter().product()])
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for c in 0..dims[0] {
            for s in 0..dims[1] {
                for i in 0..dims[2] {
                    for j in 0..dims[3] {
                        data.push(f([c, s, i, j]));
                    }
                }
            }
        }
        Self::new(dims, data)
    }

    /// The `C × S` matrix viewed as a tensor with a 1×1 kernel.
    pub fn from_matrix(m: &Matrix) -> Self {
        Self::from_raw([m.rows, m.cols, 1, 1], m.data.clone())
    }

    /// Matrix view of a 1×1 kernel tensor.
    pub fn to_matrix(&self) -> Result<Matrix> {
        if self.dims[2] != 1 || self.dims[3] != 1 {
            return Err(TensorError::Dimension(format!(
                "kernel {}x{} is not 1x1",
                self.dims[2], self.dims[3]
            )));
        }
        Ok(Matrix::from_raw(
            self.dims[0],
            self.dims[1],
            self.data.clone(),
        ))
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, s: usize, i: usize, j: usize) -> usize {
        let [_, sd, h, w] = self.dims;
        ((c * sd + s) * h + i) * w + j
    }

    #[inline]
    pub fn get(&self, c: usize, s: usize, i: usize, j: usize) -> f64 {
        self.data[self.index(c, s, i, j)]
    }

    pub fn size(&self, mode: Mode) -> usize {
        match mode {
            Mode::C => self.dims[0],
            Mode::S => self.dims[1],
        }
    }

    pub fn kernel_area(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn add(&self, other: &Tensor4) -> Result<Tensor4> {
        if self.dims != other.dims {
            return Err(TensorError::Dimension(format!(
                "cannot add {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor4::from_raw(self.dims, data))
    }

    pub fn scale(&self, alpha: f64) -> Tensor4 {
        Tensor4::from_raw(self.dims, self.data.iter().map(|v| v * alpha).collect())
    }

    /// Sub-tensor `c_range × s_range × h × w`.
    pub fn channel_block(
        &self,
        c_range: std::ops::Range<usize>,
        s_range: std::ops::Range<usize>,
    ) -> Result<Tensor4> {
        let [cd, sd, h, w] = self.dims;
        if c_range.end > cd
            || s_range.end > sd
            || c_range.start > c_range.end
            || s_range.start > s_range.end
        {
            return Err(TensorError::Dimension(format!(
                "block {c_range:?} x {s_range:?} outside {:?}",
                self.dims
            )));
        }
        let area = h * w;
        let mut data = Vec::with_capacity(c_range.len() * s_range.len() * area);
        for c in c_range.clone() {
            let start = self.index(c, s_range.start, 0, 0);
            data.extend_from_slice(&self.data[start..start + s_range.len() * area]);
        }
        Ok(Tensor4::from_raw(
            [c_range.len(), s_range.len(), h, w],
            data,
        ))
    }
}

impl Dense for Tensor4 {
    fn shape(&self) -> Vec<usize> {
        self.dims.to_vec()
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Mode unfolding; see the module docs for the entry layout.
pub fn unfold(t: &Tensor4, mode: Mode) -> Matrix {
    let [c, s, h, w] = t.dims;
    let area = h * w;
    match mode {
        Mode::C => Matrix::from_raw(c, s * area, t.data.clone()),
        Mode::S => {
            let mut out = vec![0.0; t.data.len()];
            for ci in 0..c {
                for si in 0..s {
                    let src = (ci * s + si) * area;
                    let dst = si * c * area + ci * area;
                    out[dst..dst + area].copy_from_slice(&t.data[src..src + area]);
                }
            }
            Matrix::from_raw(s, c * area, out)
        }
    }
}

/// Inverse of [`unfold`].
pub fn fold(m: &Matrix, mode: Mode, dims: [usize; 4]) -> Result<Tensor4> {
    let [c, s, h, w] = dims;
    let area = h * w;
    let (rows, cols) = match mode {
        Mode::C => (c, s * area),
        Mode::S => (s, c * area),
    };
    if m.rows != rows || m.cols != cols {
        return Err(TensorError::Dimension(format!(
            "{}x{} matrix cannot fold into {:?} along {:?} (expected {}x{})",
            m.rows, m.cols, dims, mode, rows, cols
        )));
    }
    match mode {
        Mode::C => Ok(Tensor4::from_raw(dims, m.data.clone())),
        Mode::S => {
            let mut out = vec![0.0; m.data.len()];
            for ci in 0..c {
                for si in 0..s {
                    let dst = (ci * s + si) * area;
                    let src = si * c * area + ci * area;
                    out[dst..dst + area].copy_from_slice(&m.data[src..src + area]);
                }
            }
            Ok(Tensor4::from_raw(dims, out))
        }
    }
}

/// `t ×_mode m`: replaces the `mode` axis of size `n` by `m.rows()`, where
/// `m` is `rows × n`.
pub fn mode_product(t: &Tensor4, m: &Matrix, mode: Mode) -> Result<Tensor4> {
    let n = t.size(mode);
    if m.cols != n {
        return Err(TensorError::Dimension(format!(
            "mode product along {:?}: matrix has {} columns, tensor axis has {}",
            mode, m.cols, n
        )));
    }
    let mut dims = t.dims;
    match mode {
        Mode::C => dims[0] = m.rows,
        Mode::S => dims[1] = m.rows,
    }
    let product = m.matmul(&unfold(t, mode))?;
    fold(&product, mode, dims)
}
