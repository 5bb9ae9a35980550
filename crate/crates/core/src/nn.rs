//! Reference forward passes: direct convolution, linear layers and
//! sequential stacks.
//!
//! Layout is NCHW and convolution is cross-correlation (no kernel flip).
//! Convolution weights use the crate-wide `(C/groups, S, kh, kw)` layout:
//! for output channel `s` in group `g = s / (S/groups)`, weight input index
//! `c'` reads input channel `g·(C/groups) + c'`.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("stack layer {index}: {source}")]
    Stack {
        index: usize,
        #[source]
        source: Box<NnError>,
    },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Dense `(batch, channels, height, width)` activations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(NnError::Shape(format!(
                "{} values for feature map {:?}",
                data.len(),
                dims
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(NnError::Shape(format!(
                "non-finite activation at index {i}"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims.iter().product()],
        }
    }

    /// Standard-normal entries.
    pub fn random(dims: [usize; 4], rng: &mut impl Rng) -> Self {
        let data = (0..dims.iter().product::<usize>())
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn add(&self, other: &FeatureMap) -> Result<FeatureMap> {
        if self.dims != other.dims {
            return Err(NnError::Shape(format!(
                "cannot add feature maps {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(FeatureMap {
            dims: self.dims,
            data,
        })
    }

    pub fn scale(&self, alpha: f64) -> FeatureMap {
        FeatureMap {
            dims: self.dims,
            data: self.data.iter().map(|v| v * alpha).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `‖self − other‖ / max(‖other‖, tiny)`; `+∞` on a shape mismatch.
    pub fn relative_diff(&self, other: &FeatureMap) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        let diff: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let base = other.norm();
        if base == 0.0 {
            if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            diff / base
        }
    }
}

/// `floor((size + 2·padding − kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Direct grouped 2-D convolution without bias.
pub fn conv2d(
    x: &FeatureMap,
    w: &Tensor4,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<FeatureMap> {
    conv2d_bias(x, w, None, stride, padding, groups)
}

pub fn conv2d_bias(
    x: &FeatureMap,
    w: &Tensor4,
    bias: Option<&[f64]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<FeatureMap> {
    let [n, c, h, wd] = x.dims;
    let [cg, s, kh, kw] = w.dims();
    if groups == 0 || cg * groups != c {
        return Err(NnError::Shape(format!(
            "input has {c} channels, weight expects {cg} x {groups} groups"
        )));
    }
    if s % groups != 0 {
        return Err(NnError::Shape(format!(
            "{s} output channels not divisible by {groups} groups"
        )));
    }
    if let Some(b) = bias {
        if b.len() != s {
            return Err(NnError::Shape(format!(
                "bias of length {} for {s} outputs",
                b.len()
            )));
        }
    }
    let (ho, wo) = match (
        conv_output_size(h, kh, stride, padding),
        conv_output_size(wd, kw, stride, padding),
    ) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            return Err(NnError::Shape(format!(
                "kernel {kh}x{kw} with stride {stride} and padding {padding} does not fit {h}x{wd}"
            )))
        }
    };
    let sg = s / groups;
    let mut out = vec![0.0; n * s * ho * wo];
    let wdata = w.data();
    for b in 0..n {
        for so in 0..s {
            let g = so / sg;
            let plane = &mut out[((b * s + so) * ho) * wo..((b * s + so) * ho + ho) * wo];
            if let Some(bias) = bias {
                plane.iter_mut().for_each(|v| *v = bias[so]);
            }
            for ci in 0..cg {
                let cin = g * cg + ci;
                let xplane = &x.data[((b * c + cin) * h) * wd..((b * c + cin) * h + h) * wd];
                for ki in 0..kh {
                    for kj in 0..kw {
                        let wv = wdata[((ci * s + so) * kh + ki) * kw + kj];
                        if wv == 0.0 {
                            continue;
                        }
                        // Output columns whose input column lands inside the image.
                        let ow_lo = if padding > kj {
                            (padding - kj).div_ceil(stride)
                        } else {
                            0
                        };
                        let ow_hi = if wd + padding > kj {
                            ((wd - 1 + padding - kj) / stride + 1).min(wo)
                        } else {
                            0
                        };
                        for oi in 0..ho {
                            let ii = (oi * stride + ki) as isize - padding as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            let xrow = &xplane[ii as usize * wd..ii as usize * wd + wd];
                            let orow = &mut plane[oi * wo..oi * wo + wo];
                            for (oj, o) in orow.iter_mut().enumerate().take(ow_hi).skip(ow_lo) {
                                *o += wv * xrow[oj * stride + kj - padding];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(FeatureMap {
        dims: [n, s, ho, wo],
        data: out,
    })
}

/// `x · W (+ bias)` where `x` is flattened to `(batch, C·H·W)`.
pub fn linear(x: &FeatureMap, w: &Matrix, bias: Option<&[f64]>) -> Result<FeatureMap> {
    let [n, c, h, wd] = x.dims;
    let features = c * h * wd;
    if features != w.rows() {
        return Err(NnError::Shape(format!(
            "linear expects {} features, input has {features}",
            w.rows()
        )));
    }
    let s = w.cols();
    if let Some(b) = bias {
        if b.len() != s {
            return Err(NnError::Shape(format!(
                "bias of length {} for {s} outputs",
                b.len()
            )));
        }
    }
    let mut out = vec![0.0; n * s];
    for b in 0..n {
        let xrow = &x.data[b * features..(b + 1) * features];
        let orow = &mut out[b * s..(b + 1) * s];
        if let Some(bias) = bias {
            orow.copy_from_slice(bias);
        }
        for (f, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, wv) in orow.iter_mut().zip(w.row(f)) {
                *o += xv * wv;
            }
        }
    }
    Ok(FeatureMap {
        dims: [n, s, 1, 1],
        data: out,
    })
}

pub fn relu(x: &FeatureMap) -> FeatureMap {
    FeatureMap {
        dims: x.dims,
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor4,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvLayer {
    /// Stride-1, unpadded, ungrouped convolution.
    pub fn plain(weight: Tensor4) -> Self {
        Self {
            weight,
            bias: None,
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

/// One entry of a sequential stack. Activations are explicit entries.
#[derive(Debug, Clone, PartialEq)]
pub enum StackLayer {
    Conv(ConvLayer),
    Linear {
        weight: Matrix,
        bias: Option<Vec<f64>>,
    },
    Relu,
}

impl StackLayer {
    pub fn forward(&self, x: &FeatureMap) -> Result<FeatureMap> {
        match self {
            StackLayer::Conv(l) => conv2d_bias(
                x,
                &l.weight,
                l.bias.as_deref(),
                l.stride,
                l.padding,
                l.groups,
            ),
            StackLayer::Linear { weight, bias } => linear(x, weight, bias.as_deref()),
            StackLayer::Relu => Ok(relu(x)),
        }
    }
}

/// Applies `layers` left to right; an empty stack is the identity.
pub fn run_stack(layers: &[StackLayer], x: &FeatureMap) -> Result<FeatureMap> {
    let mut current = x.clone();
    for (index, layer) in layers.iter().enumerate() {
        current = layer.forward(&current).map_err(|e| NnError::Stack {
            index,
            source: Box::new(e),
        })?;
    }
    Ok(current)
}

/// Runs every branch on the same input and sums the outputs.
pub fn run_branch_sum(branches: &[Vec<StackLayer>], x: &FeatureMap) -> Result<FeatureMap> {
    let mut total: Option<FeatureMap> = None;
    for branch in branches {
        let y = run_stack(branch, x)?;
        total = Some(match total {
            None => y,
            Some(t) => t.add(&y)?,
        });
    }
    total.ok_or_else(|| NnError::Shape("no branches".into()))
}
