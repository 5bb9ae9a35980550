//! Factorizations of a single layer: two-factor SVD for fully-connected and
//! 1×1 layers, Tucker-2 (1×1 → k×k → 1×1) for larger kernels.
//!
//! Weights are `(C, S, k, k)` tensors, so a factor matrix is also a valid
//! 1×1 convolution weight: `W0` (`C×R`) maps `C → R` channels, `first`
//! (`C×r1`) maps `C → r1`, and `last` (`r2×S`) maps `r2 → S`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ConvLayer, StackLayer};
use crate::planner::{LayerKind, LayerSpec};
use crate::tensor::{
    complete_columns, mode_product, svd, truncated_svd, unfold, Dense, Matrix, Mode, Tensor4,
    TensorError,
};

/// HOOI sweeps stop once the relative error improves by less than this.
pub const HOOI_TOLERANCE: f64 = 1e-9;
pub const HOOI_MAX_SWEEPS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecomposeError {
    #[error("{what} rank {rank} out of range 1..={max}")]
    RankOutOfRange {
        what: &'static str,
        rank: usize,
        max: usize,
    },
    #[error("kernel {h}x{w} is not square")]
    NonSquareKernel { h: usize, w: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, DecomposeError>;

/// `W ≈ W0 · W1` with `W0 = U'√Σ'` and `W1 = √Σ'V'ᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdFactors {
    pub w0: Matrix,
    pub w1: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.w0.cols()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.w0.matmul(&self.w1).expect("factor ranks agree")
    }

    pub fn param_count(&self) -> usize {
        self.w0.data().len() + self.w1.data().len()
    }
}

/// `W ≈ core ×_C first ×_S lastᵀ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerFactors {
    /// `C × r1`
    pub first: Matrix,
    /// `r1 × r2 × k × k`
    pub core: Tensor4,
    /// `r2 × S`
    pub last: Matrix,
}

impl TuckerFactors {
    pub fn ranks(&self) -> (usize, usize) {
        (self.first.cols(), self.last.rows())
    }

    pub fn kernel(&self) -> usize {
        self.core.dims()[2]
    }

    pub fn reconstruct(&self) -> Tensor4 {
        let t = mode_product(&self.core, &self.first, Mode::C).expect("first matches core");
        mode_product(&t, &self.last.transpose(), Mode::S).expect("last matches core")
    }

    pub fn param_count(&self) -> usize {
        self.first.data().len() + self.core.data().len() + self.last.data().len()
    }
}

/// Truncated SVD factors with `√Σ` split evenly between both sides.
pub fn decompose_svd(w: &Matrix, rank: usize) -> Result<SvdFactors> {
    let max = w.rows().min(w.cols());
    if rank == 0 || rank > max {
        return Err(DecomposeError::RankOutOfRange {
            what: "svd",
            rank,
            max,
        });
    }
    let t = truncated_svd(w, rank)?;
    let root: Vec<f64> = t.sigma.iter().map(|s| s.sqrt()).collect();
    Ok(SvdFactors {
        w0: t.u.scale_columns(&root)?,
        w1: t.v.scale_columns(&root)?.transpose(),
    })
}

fn check_tucker_ranks(dims: [usize; 4], r1: usize, r2: usize) -> Result<()> {
    let [c, s, h, w] = dims;
    if h != w {
        return Err(DecomposeError::NonSquareKernel { h, w });
    }
    if r1 == 0 || r1 > c {
        return Err(DecomposeError::RankOutOfRange {
            what: "tucker r1",
            rank: r1,
            max: c,
        });
    }
    if r2 == 0 || r2 > s {
        return Err(DecomposeError::RankOutOfRange {
            what: "tucker r2",
            rank: r2,
            max: s,
        });
    }
    Ok(())
}

/// Leading left-singular vectors of both channel unfoldings: `(C × r1, S × r2)`.
///
/// Bases for smaller ranks are column prefixes of these, so one call
/// serves a whole rank scan.
pub fn hosvd_bases(w: &Tensor4, r1: usize, r2: usize) -> Result<(Matrix, Matrix)> {
    check_tucker_ranks(w.dims(), r1, r2)?;
    let u = leading_basis(&unfold(w, Mode::C), r1)?;
    let v = leading_basis(&unfold(w, Mode::S), r2)?;
    Ok((u, v))
}

/// First `r` left-singular vectors of `m`. When `r` exceeds the number of
/// columns the basis is completed with orthonormal vectors, which carry no
/// energy of `m`.
fn leading_basis(m: &Matrix, r: usize) -> Result<Matrix> {
    Ok(complete_columns(&svd(m)?.u, r)?)
}

/// Core for fixed orthonormal bases: `W ×_C firstᵀ ×_S last`.
pub fn project_core(w: &Tensor4, first: &Matrix, last: &Matrix) -> Result<Tensor4> {
    let t = mode_product(w, &first.transpose(), Mode::C)?;
    Ok(mode_product(&t, last, Mode::S)?)
}

/// Truncated HOSVD over the two channel modes.
pub fn decompose_tucker2(w: &Tensor4, r1: usize, r2: usize) -> Result<TuckerFactors> {
    let (u, v) = hosvd_bases(w, r1, r2)?;
    tucker_from_bases(w, u, v.transpose())
}

/// Builds factors from a `C × r1` basis and an `r2 × S` basis.
pub fn tucker_from_bases(w: &Tensor4, first: Matrix, last: Matrix) -> Result<TuckerFactors> {
    let core = project_core(w, &first, &last)?;
    Ok(TuckerFactors { first, core, last })
}

/// HOSVD followed by up to `max_sweeps` HOOI sweeps.
///
/// A sweep that would increase the error is discarded and ends the
/// iteration, so the result is never worse than plain HOSVD.
pub fn decompose_tucker2_hooi(
    w: &Tensor4,
    r1: usize,
    r2: usize,
    max_sweeps: usize,
) -> Result<TuckerFactors> {
    let mut best = decompose_tucker2(w, r1, r2)?;
    let mut best_err = relative_error(w, &best.reconstruct())?;
    for _ in 0..max_sweeps {
        // Each mode's basis is refit against the other mode's current basis.
        let partial = mode_product(w, &best.last, Mode::S)?;
        let first = leading_basis(&unfold(&partial, Mode::C), r1)?;
        let partial = mode_product(w, &first.transpose(), Mode::C)?;
        let last = leading_basis(&unfold(&partial, Mode::S), r2)?.transpose();
        let candidate = tucker_from_bases(w, first, last)?;
        let err = relative_error(w, &candidate.reconstruct())?;
        if err > best_err {
            break;
        }
        let improvement = best_err - err;
        best = candidate;
        best_err = err;
        if improvement < HOOI_TOLERANCE {
            break;
        }
    }
    Ok(best)
}

/// `‖orig − rec‖_F / ‖orig‖_F`; a zero original gives 0 for a zero
/// reconstruction and `+∞` otherwise.
pub fn relative_error<A: Dense>(original: &A, reconstructed: &A) -> Result<f64> {
    if original.shape() != reconstructed.shape() {
        return Err(DecomposeError::Shape(format!(
            "{:?} vs {:?}",
            original.shape(),
            reconstructed.shape()
        )));
    }
    let diff: f64 = original
        .values()
        .iter()
        .zip(reconstructed.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let norm = original.frobenius_norm();
    if norm == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / norm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Factors {
    /// The layer is kept as is.
    Original {
        weight: Tensor4,
    },
    Svd(SvdFactors),
    Tucker(TuckerFactors),
}

/// One original layer and the factor layers that replace it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedLayer {
    pub original: LayerSpec,
    pub factors: Factors,
    pub bias: Option<Vec<f64>>,
    /// One flag per factor layer; empty for passthrough.
    pub frozen_mask: Vec<bool>,
}

impl DecomposedLayer {
    pub fn passthrough(original: LayerSpec, weight: Tensor4, bias: Option<Vec<f64>>) -> Self {
        Self {
            original,
            factors: Factors::Original { weight },
            bias,
            frozen_mask: Vec::new(),
        }
    }

    pub fn svd(original: LayerSpec, factors: SvdFactors, bias: Option<Vec<f64>>) -> Self {
        Self {
            original,
            factors: Factors::Svd(factors),
            bias,
            frozen_mask: vec![false; 2],
        }
    }

    pub fn tucker(original: LayerSpec, factors: TuckerFactors, bias: Option<Vec<f64>>) -> Self {
        Self {
            original,
            factors: Factors::Tucker(factors),
            bias,
            frozen_mask: vec![false; 3],
        }
    }

    pub fn factor_layer_count(&self) -> usize {
        match self.factors {
            Factors::Original { .. } => 0,
            Factors::Svd(_) => 2,
            Factors::Tucker(_) => 3,
        }
    }

    /// The layer as a sequential stack; the bias sits on the last entry.
    pub fn to_stack(&self) -> Vec<StackLayer> {
        let spec = &self.original;
        let conv = |weight: Tensor4, stride: usize, padding: usize, bias: Option<Vec<f64>>| {
            StackLayer::Conv(ConvLayer {
                weight,
                bias,
                stride,
                padding,
                groups: 1,
            })
        };
        let bias = self.bias.clone();
        match (&self.factors, spec.kind) {
            (Factors::Original { weight }, LayerKind::Linear) => vec![StackLayer::Linear {
                weight: weight.to_matrix().expect("linear weight is a matrix"),
                bias,
            }],
            (Factors::Original { weight }, LayerKind::Conv) => vec![StackLayer::Conv(ConvLayer {
                weight: weight.clone(),
                bias,
                stride: spec.stride,
                padding: spec.padding,
                groups: spec.groups,
            })],
            (Factors::Svd(f), LayerKind::Linear) => vec![
                StackLayer::Linear {
                    weight: f.w0.clone(),
                    bias: None,
                },
                StackLayer::Linear {
                    weight: f.w1.clone(),
                    bias,
                },
            ],
            (Factors::Svd(f), LayerKind::Conv) => vec![
                conv(Tensor4::from_matrix(&f.w0), 1, 0, None),
                conv(Tensor4::from_matrix(&f.w1), spec.stride, spec.padding, bias),
            ],
            (Factors::Tucker(f), _) => vec![
                conv(Tensor4::from_matrix(&f.first), 1, 0, None),
                conv(f.core.clone(), spec.stride, spec.padding, None),
                conv(Tensor4::from_matrix(&f.last), 1, 0, bias),
            ],
        }
    }
}

/// Reassembled weight in the original `(C, S, k, k)` shape.
pub fn reconstruct(d: &DecomposedLayer) -> Tensor4 {
    match &d.factors {
        Factors::Original { weight } => weight.clone(),
        Factors::Svd(f) => Tensor4::from_matrix(&f.reconstruct()),
        Factors::Tucker(f) => f.reconstruct(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{conv2d_bias, run_stack, FeatureMap};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor4::from_fn(dims, |_| rng.sample(StandardNormal)).unwrap()
    }

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        random_tensor([rows, cols, 1, 1], seed).to_matrix().unwrap()
    }

    #[test]
    fn full_rank_svd_is_exact() {
        let w = random_matrix(7, 5, 1);
        let f = decompose_svd(&w, 5).unwrap();
        assert!(relative_error(&w, &f.reconstruct()).unwrap() < 1e-10);
    }

    #[test]
    fn equal_singular_values_drop_one() {
        let w = Matrix::from_diag(&[2.0, 2.0]).unwrap();
        let f = decompose_svd(&w, 1).unwrap();
        let diff = w.sub(&f.reconstruct()).unwrap();
        assert!((diff.frobenius_norm() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn svd_factors_balance_sqrt_sigma() {
        let w = random_matrix(6, 4, 2);
        let f = decompose_svd(&w, 3).unwrap();
        let t = truncated_svd(&w, 3).unwrap();
        assert!(relative_error(&t.reconstruct(), &f.reconstruct()).unwrap() < 1e-10);
        // Column norms of W0 and row norms of W1 both equal √σ.
        for (j, s) in t.sigma.iter().enumerate() {
            let c0: f64 = f.w0.column(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            let r1: f64 = f.w1.row(j).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((c0 - s.sqrt()).abs() < 1e-10);
            assert!((r1 - s.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn svd_param_count_at_rank_16() {
        let f = decompose_svd(&random_matrix(64, 64, 3), 16).unwrap();
        assert_eq!(f.param_count(), 2048);
        assert_eq!(f.param_count() * 2, 64 * 64);
    }

    #[test]
    fn svd_rank_errors() {
        let w = random_matrix(3, 4, 4);
        assert!(matches!(
            decompose_svd(&w, 0),
            Err(DecomposeError::RankOutOfRange { .. })
        ));
        assert!(matches!(
            decompose_svd(&w, 4),
            Err(DecomposeError::RankOutOfRange { max: 3, .. })
        ));
    }

    #[test]
    fn full_rank_tucker_is_exact() {
        let w = random_tensor([5, 6, 3, 3], 5);
        let f = decompose_tucker2(&w, 5, 6).unwrap();
        assert!(relative_error(&w, &f.reconstruct()).unwrap() < 1e-10);
        assert_eq!(f.param_count(), 5 * 5 + 5 * 6 * 9 + 6 * 6);
    }

    #[test]
    fn rank_above_unfolding_width_is_completed() {
        // C = 11 exceeds S·k² = 9, so the C-unfolding has only 9 singular vectors.
        let w = random_tensor([11, 1, 3, 3], 9);
        let f = decompose_tucker2(&w, 11, 1).unwrap();
        assert!(f.first.orthonormality_defect() < 1e-12);
        assert!(relative_error(&w, &f.reconstruct()).unwrap() < 1e-10);
        let h = decompose_tucker2_hooi(&w, 11, 1, 3).unwrap();
        assert!(relative_error(&w, &h.reconstruct()).unwrap() < 1e-10);
    }

    #[test]
    fn separable_tensor_has_tucker_rank_one() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [2.0, 1.0, -1.0];
        let k = [[1.0, 0.0, 2.0], [0.5, -1.0, 0.0], [3.0, 1.0, 1.0]];
        let w = Tensor4::from_fn([4, 3, 3, 3], |[c, s, i, j]| a[c] * b[s] * k[i][j]).unwrap();
        let f = decompose_tucker2(&w, 1, 1).unwrap();
        assert!(relative_error(&w, &f.reconstruct()).unwrap() < 1e-12);
    }

    /// Independent HOSVD: explicit SVDs of both unfoldings, core by
    /// summation, reconstruction by summation.
    #[test]
    fn tucker_matches_hosvd_oracle() {
        let w = random_tensor([8, 8, 3, 3], 6);
        let (r1, r2) = (4, 4);
        let u = truncated_svd(&unfold(&w, Mode::C), r1).unwrap().u;
        let v = truncated_svd(&unfold(&w, Mode::S), r2).unwrap().u;
        let mut rec = vec![0.0; 8 * 8 * 9];
        let mut core = vec![0.0; r1 * r2 * 9];
        for a in 0..r1 {
            for b in 0..r2 {
                for p in 0..9 {
                    let mut sum = 0.0;
                    for c in 0..8 {
                        for s in 0..8 {
                            sum += u.get(c, a) * v.get(s, b) * w.data()[(c * 8 + s) * 9 + p];
                        }
                    }
                    core[(a * r2 + b) * 9 + p] = sum;
                }
            }
        }
        for c in 0..8 {
            for s in 0..8 {
                for p in 0..9 {
                    let mut sum = 0.0;
                    for a in 0..r1 {
                        for b in 0..r2 {
                            sum += u.get(c, a) * v.get(s, b) * core[(a * r2 + b) * 9 + p];
                        }
                    }
                    rec[(c * 8 + s) * 9 + p] = sum;
                }
            }
        }
        let oracle = Tensor4::new([8, 8, 3, 3], rec).unwrap();
        let expected = relative_error(&w, &oracle).unwrap();
        let f = decompose_tucker2(&w, r1, r2).unwrap();
        let got = relative_error(&w, &f.reconstruct()).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn hooi_never_worse_than_hosvd() {
        let w = random_tensor([9, 7, 3, 3], 7);
        let base = relative_error(&w, &decompose_tucker2(&w, 3, 2).unwrap().reconstruct()).unwrap();
        let refined = decompose_tucker2_hooi(&w, 3, 2, HOOI_MAX_SWEEPS).unwrap();
        let err = relative_error(&w, &refined.reconstruct()).unwrap();
        assert!(err <= base + 1e-15);
        assert!(refined.first.orthonormality_defect() < 1e-10);
    }

    #[test]
    fn tucker_error_is_monotone_in_each_rank() {
        let w = random_tensor([6, 5, 3, 3], 8);
        let err = |r1, r2| {
            relative_error(&w, &decompose_tucker2(&w, r1, r2).unwrap().reconstruct()).unwrap()
        };
        for r2 in 1..=5 {
            for r1 in 1..6 {
                assert!(err(r1 + 1, r2) <= err(r1, r2) + 1e-12);
            }
        }
    }

    #[test]
    fn tucker_rejects_bad_ranks_and_kernels() {
        let w = random_tensor([4, 4, 3, 3], 9);
        assert!(matches!(
            decompose_tucker2(&w, 5, 1),
            Err(DecomposeError::RankOutOfRange { .. })
        ));
        assert!(matches!(
            decompose_tucker2(&w, 1, 0),
            Err(DecomposeError::RankOutOfRange { .. })
        ));
        let rect = random_tensor([4, 4, 3, 1], 9);
        assert!(matches!(
            decompose_tucker2(&rect, 1, 1),
            Err(DecomposeError::NonSquareKernel { h: 3, w: 1 })
        ));
    }

    #[test]
    fn relative_error_cases() {
        let d = Matrix::from_diag(&[3.0, 2.0, 1.0]).unwrap();
        assert_eq!(relative_error(&d, &d).unwrap(), 0.0);
        let five = Matrix::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(relative_error(&five, &Matrix::zeros(1, 2)).unwrap(), 1.0);
        let r2 = truncated_svd(&d, 2).unwrap().reconstruct();
        assert!((relative_error(&d, &r2).unwrap() - 1.0 / 14f64.sqrt()).abs() < 1e-12);
        let z = Matrix::zeros(2, 2);
        assert_eq!(relative_error(&z, &z).unwrap(), 0.0);
        assert_eq!(
            relative_error(&z, &Matrix::identity(2)).unwrap(),
            f64::INFINITY
        );
        assert!(relative_error(&z, &Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn passthrough_reconstructs_identically() {
        let w = random_tensor([3, 4, 3, 3], 10);
        let d =
            DecomposedLayer::passthrough(LayerSpec::conv("p", 3, 4, 3, 1, 1, 5), w.clone(), None);
        assert_eq!(reconstruct(&d), w);
        assert!(d.frozen_mask.is_empty());
    }

    #[test]
    fn tucker_stack_matches_reconstructed_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = random_tensor([6, 5, 3, 3], 12);
        let f = decompose_tucker2(&w, 3, 4).unwrap();
        let rec = f.reconstruct();
        for stride in [1, 2] {
            for padding in [0, 1, 2] {
                let spec = LayerSpec::conv("t", 6, 5, 3, stride, padding, 7);
                let bias: Vec<f64> = (0..5).map(|i| i as f64 * 0.1).collect();
                let d = DecomposedLayer::tucker(spec, f.clone(), Some(bias.clone()));
                let x = FeatureMap::random([2, 6, 7, 7], &mut rng);
                let got = run_stack(&d.to_stack(), &x).unwrap();
                let want = conv2d_bias(&x, &rec, Some(&bias), stride, padding, 1).unwrap();
                assert!(got.relative_diff(&want) < 1e-10);
            }
        }
    }

    #[test]
    fn svd_stack_matches_merged_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = random_matrix(8, 5, 14);
        let f = decompose_svd(&w, 3).unwrap();
        let d = DecomposedLayer::svd(LayerSpec::linear("fc", 8, 5, false), f.clone(), None);
        let x = FeatureMap::random([3, 8, 1, 1], &mut rng);
        let got = run_stack(&d.to_stack(), &x).unwrap();
        let want = crate::nn::linear(&x, &f.reconstruct(), None).unwrap();
        assert!(got.relative_diff(&want) < 1e-8);
    }
}
