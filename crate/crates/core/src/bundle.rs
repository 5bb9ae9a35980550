//! Factor bundles: a directory with `manifest.json` and one binary tensor
//! file per factor (`<layer>.<factor>.bin`).
//!
//! Original weights are not stored. They come from the seeded generator or
//! from a weights directory holding `<layer>.bin` (and `<layer>.bias.bin`
//! for layers with a bias), and are regenerated on verification.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decompose::{
    decompose_svd, decompose_tucker2, decompose_tucker2_hooi, relative_error, DecomposeError,
    DecomposedLayer, SvdFactors, TuckerFactors,
};
use crate::model::ModelFile;
use crate::nn::{
    conv2d_bias, linear, run_branch_sum, run_stack, ConvLayer, FeatureMap, NnError, StackLayer,
};
use crate::planner::{CompressionPlan, Decision, Factorization, LayerKind, LayerSpec};
use crate::tensor::io::{self, FormatError};
use crate::tensor::{Matrix, Tensor4};
use crate::transforms::{
    branch_tucker, branched_to_grouped, freeze_and_refit, freeze_svd_and_refit, GroupedConvStack,
    TransformError,
};
use crate::weights::{seeded_bias, seeded_weight};

pub const MANIFEST: &str = "manifest.json";

/// Tolerance of the `forward` and `branch-equiv` checks.
pub const FORWARD_TOL: f64 = 1e-6;
/// Tolerance of the `merge-equiv` check.
pub const MERGE_TOL: f64 = 1e-8;
/// Recomputed errors must match the manifest within `RECONSTRUCT_TOL · max(1, e)`.
pub const RECONSTRUCT_TOL: f64 = 1e-9;
/// Spatial size cap for verification inputs.
const VERIFY_HW: usize = 8;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("layer '{layer}': {path}: {source}")]
    File {
        layer: String,
        path: String,
        #[source]
        source: FormatError,
    },
    #[error("layer '{layer}': {message}")]
    Layer { layer: String, message: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("plan does not match model: {0}")]
    PlanMismatch(String),
    #[error("{}", .0.join("\n"))]
    Many(Vec<String>),
}

fn layer_err(layer: &str, message: impl std::fmt::Display) -> BundleError {
    BundleError::Layer {
        layer: layer.to_string(),
        message: message.to_string(),
    }
}

impl From<(String, DecomposeError)> for BundleError {
    fn from((layer, e): (String, DecomposeError)) -> Self {
        layer_err(&layer, e)
    }
}

/// Where original weights come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSource {
    Seeded { seed: u64 },
    Directory { path: PathBuf },
}

impl WeightSource {
    /// Weight `(C/groups, S, k, k)` and optional bias for `spec`.
    pub fn load(&self, spec: &LayerSpec) -> Result<(Tensor4, Option<Vec<f64>>), BundleError> {
        match self {
            WeightSource::Seeded { seed } => {
                Ok((seeded_weight(spec, *seed), seeded_bias(spec, *seed)))
            }
            WeightSource::Directory { path } => {
                let file = path.join(format!("{}.bin", file_stem(&spec.name)));
                let w = read_tensor(&spec.name, &file)?;
                let want = [
                    spec.in_channels / spec.groups,
                    spec.out_channels,
                    spec.kernel,
                    spec.kernel,
                ];
                if w.dims() != want {
                    return Err(layer_err(
                        &spec.name,
                        format!(
                            "{}: dims {:?} do not match layer {:?}",
                            file.display(),
                            w.dims(),
                            want
                        ),
                    ));
                }
                let bias = if spec.has_bias {
                    let file = path.join(format!("{}.bias.bin", file_stem(&spec.name)));
                    let b = read_tensor(&spec.name, &file)?;
                    if b.data().len() != spec.out_channels {
                        return Err(layer_err(
                            &spec.name,
                            format!(
                                "{}: {} bias values for {} outputs",
                                file.display(),
                                b.data().len(),
                                spec.out_channels
                            ),
                        ));
                    }
                    Some(b.into_data())
                } else {
                    None
                };
                Ok((w, bias))
            }
        }
    }
}

fn file_stem(layer: &str) -> String {
    layer.replace(['/', '\\'], "_")
}

fn read_tensor(layer: &str, path: &Path) -> Result<Tensor4, BundleError> {
    io::read_file(path).map_err(|source| BundleError::File {
        layer: layer.to_string(),
        path: path.display().to_string(),
        source,
    })
}

fn write_tensor(layer: &str, path: &Path, t: &Tensor4) -> Result<(), BundleError> {
    io::write_file(path, t).map_err(|source| BundleError::File {
        layer: layer.to_string(),
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub name: String,
    pub scheme: String,
    pub ranks: Vec<usize>,
    pub relative_error: f64,
    pub files: Vec<String>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub frozen_mask: Vec<bool>,
    /// Relative gap between the branch sum and the undivided Tucker factors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch_truncation_error: Option<f64>,
    pub spec: LayerSpec,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub alpha: f64,
    pub seed: u64,
    pub transform: String,
    pub weights: WeightSource,
    pub hooi_sweeps: usize,
    pub layers: Vec<LayerRecord>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self, BundleError> {
        let path = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|source| BundleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text)
            .map_err(|e| BundleError::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn layer(&self, name: &str) -> Option<&LayerRecord> {
        self.layers.iter().find(|l| l.name == name)
    }
}

/// In-memory factors of one layer.
#[derive(Debug, Clone)]
enum Built {
    Original,
    Svd(SvdFactors),
    Tucker(TuckerFactors),
    Grouped {
        grouped: GroupedConvStack,
        vanilla: TuckerFactors,
    },
}

fn scheme_name(d: &Decision) -> &'static str {
    match d {
        Decision::Passthrough => "original",
        Decision::Svd { .. } => "svd",
        Decision::Tucker { .. } => "tucker",
        Decision::Frozen {
            base: Factorization::Svd { .. },
            ..
        } => "frozen_svd",
        Decision::Frozen {
            base: Factorization::Tucker { .. },
            ..
        } => "frozen_tucker",
        Decision::Branched { .. } => "branched",
        Decision::MergedHost { .. } => "merged_host",
        Decision::MergedCore { .. } => "merged_core",
    }
}

fn decision_ranks(d: &Decision) -> Vec<usize> {
    match *d {
        Decision::Svd { rank } => vec![rank],
        Decision::Tucker { r1, r2 }
        | Decision::Branched { r1, r2, .. }
        | Decision::MergedCore { r1, r2, .. } => {
            vec![r1, r2]
        }
        Decision::Frozen { base, .. } => match base {
            Factorization::Svd { rank } => vec![rank],
            Factorization::Tucker { r1, r2 } => vec![r1, r2],
        },
        Decision::Passthrough | Decision::MergedHost { .. } => vec![],
    }
}

fn tucker(w: &Tensor4, r1: usize, r2: usize, hooi: usize) -> Result<TuckerFactors, DecomposeError> {
    if hooi == 0 {
        decompose_tucker2(w, r1, r2)
    } else {
        decompose_tucker2_hooi(w, r1, r2, hooi)
    }
}

/// Factorizes one layer according to its decision (hosts are handled later).
fn build(
    spec: &LayerSpec,
    decision: &Decision,
    w: &Tensor4,
    hooi: usize,
) -> Result<Built, BundleError> {
    let name = &spec.name;
    let wrap_t = |e: TransformError| layer_err(name, e);
    let wrap_d = |e: DecomposeError| layer_err(name, e);
    let matrix = || {
        if spec.kernel != 1 {
            return Err(layer_err(
                name,
                format!(
                    "SVD needs a 1x1 kernel, layer has {}x{}",
                    spec.kernel, spec.kernel
                ),
            ));
        }
        w.to_matrix().map_err(|e| layer_err(name, e))
    };
    Ok(match decision {
        Decision::Passthrough | Decision::MergedHost { .. } => Built::Original,
        Decision::Svd { rank } => Built::Svd(decompose_svd(&matrix()?, *rank).map_err(wrap_d)?),
        Decision::Tucker { r1, r2 } | Decision::MergedCore { r1, r2, .. } => {
            Built::Tucker(tucker(w, *r1, *r2, hooi).map_err(wrap_d)?)
        }
        Decision::Frozen { base, .. } => match *base {
            Factorization::Svd { rank } => {
                let m = matrix()?;
                let f = decompose_svd(&m, rank).map_err(wrap_d)?;
                Built::Svd(freeze_svd_and_refit(&m, &f).map_err(wrap_t)?)
            }
            Factorization::Tucker { r1, r2 } => {
                let f = tucker(w, r1, r2, hooi).map_err(wrap_d)?;
                Built::Tucker(freeze_and_refit(w, &f).map_err(wrap_t)?)
            }
        },
        Decision::Branched { r1, r2, branches } => {
            let vanilla = tucker(w, *r1, *r2, hooi).map_err(wrap_d)?;
            let b = branch_tucker(&vanilla, *branches).map_err(wrap_t)?;
            Built::Grouped {
                grouped: branched_to_grouped(&b).map_err(wrap_t)?,
                vanilla,
            }
        }
    })
}

/// Composes a chain of affine 1×1 maps `x ↦ x·M + b` into one.
fn compose(
    chain: &[(Matrix, Option<Vec<f64>>)],
) -> Result<(Matrix, Option<Vec<f64>>), BundleError> {
    let mut it = chain.iter();
    let (m0, b0) = it.next().expect("non-empty chain").clone();
    let mut m = m0;
    let mut b = b0;
    for (next, nb) in it {
        m = m
            .matmul(next)
            .map_err(|e| BundleError::Manifest(e.to_string()))?;
        b = match (b, nb) {
            (None, None) => None,
            (b, nb) => {
                let carried = match b {
                    Some(v) => Matrix::new(1, v.len(), v)
                        .and_then(|row| row.matmul(next))
                        .map_err(|e| BundleError::Manifest(e.to_string()))?
                        .into_data(),
                    None => vec![0.0; next.cols()],
                };
                Some(match nb {
                    Some(nb) => carried.iter().zip(nb).map(|(a, c)| a + c).collect(),
                    None => carried,
                })
            }
        };
    }
    Ok((m, b))
}

type Bias = Option<Vec<f64>>;
/// A 1×1 layer as a matrix plus optional bias.
type Affine = (Matrix, Bias);
type TuckerLookup<'a> = &'a dyn Fn(&str) -> Result<(TuckerFactors, Bias), BundleError>;

/// The affine chain a merged host stands for.
fn host_chain(
    spec: &LayerSpec,
    decision: &Decision,
    w: &Tensor4,
    bias: Option<Vec<f64>>,
    tucker_of: TuckerLookup<'_>,
) -> Result<Vec<Affine>, BundleError> {
    let Decision::MergedHost {
        absorbs_last_of,
        absorbs_first_of,
        ..
    } = decision
    else {
        return Err(layer_err(&spec.name, "not a merged host"));
    };
    let mut chain = Vec::new();
    if let Some(prev) = absorbs_last_of {
        let (f, b) = tucker_of(prev)?;
        chain.push((f.last, b));
    }
    chain.push((w.to_matrix().map_err(|e| layer_err(&spec.name, e))?, bias));
    if let Some(next) = absorbs_first_of {
        let (f, _) = tucker_of(next)?;
        chain.push((f.first, None));
    }
    Ok(chain)
}

fn check_plan(model: &ModelFile, plan: &CompressionPlan) -> Result<(), BundleError> {
    let layers: Vec<_> = model.layers().collect();
    if layers.len() != plan.entries.len() {
        return Err(BundleError::PlanMismatch(format!(
            "model has {} layers, plan has {}",
            layers.len(),
            plan.entries.len()
        )));
    }
    for (l, e) in layers.iter().zip(&plan.entries) {
        if l.spec != e.spec {
            return Err(BundleError::PlanMismatch(format!(
                "layer '{}' differs from plan entry '{}'",
                l.spec.name, e.spec.name
            )));
        }
    }
    Ok(())
}

/// Rank bounds the decision must respect; collected for all layers at once.
fn check_ranks(spec: &LayerSpec, d: &Decision) -> Option<String> {
    let (c, s) = (spec.in_channels, spec.out_channels);
    let bad = match *d {
        Decision::Svd { rank }
        | Decision::Frozen {
            base: Factorization::Svd { rank },
            ..
        } => rank == 0 || rank > c.min(s) || spec.kernel != 1,
        Decision::Tucker { r1, r2 }
        | Decision::Frozen {
            base: Factorization::Tucker { r1, r2 },
            ..
        }
        | Decision::MergedCore { r1, r2, .. } => r1 == 0 || r2 == 0 || r1 > c || r2 > s,
        Decision::Branched { r1, r2, branches } => {
            r1 == 0
                || r2 == 0
                || r1 > c
                || r2 > s
                || branches == 0
                || r1 % branches != 0
                || r2 % branches != 0
        }
        Decision::Passthrough | Decision::MergedHost { .. } => false,
    };
    bad.then(|| {
        format!(
            "layer '{}': ranks {:?} invalid for {}x{} kernel {}",
            spec.name,
            decision_ranks(d),
            c,
            s,
            spec.kernel
        )
    })
}

pub struct DecomposeOptions {
    pub seed: u64,
    pub weights: WeightSource,
    pub hooi_sweeps: usize,
}

/// Factorizes every layer of `plan` and writes the bundle into `out`.
pub fn write_bundle(
    model: &ModelFile,
    plan: &CompressionPlan,
    opts: &DecomposeOptions,
    out: &Path,
) -> Result<Manifest, BundleError> {
    check_plan(model, plan)?;
    let problems: Vec<String> = plan
        .entries
        .iter()
        .filter_map(|e| check_ranks(&e.spec, &e.decision))
        .collect();
    if !problems.is_empty() {
        return Err(BundleError::Many(problems));
    }
    std::fs::create_dir_all(out).map_err(|source| BundleError::Io {
        path: out.display().to_string(),
        source,
    })?;

    let built: Vec<(Tensor4, Option<Vec<f64>>, Built)> = plan
        .entries
        .par_iter()
        .map(|e| {
            let (w, b) = opts.weights.load(&e.spec)?;
            let built = build(&e.spec, &e.decision, &w, opts.hooi_sweeps)?;
            Ok((w, b, built))
        })
        .collect::<Result<_, BundleError>>()?;

    let index: HashMap<&str, usize> = plan
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (e.spec.name.as_str(), i))
        .collect();
    let tucker_of = |name: &str| -> Result<(TuckerFactors, Bias), BundleError> {
        match index.get(name).map(|&i| &built[i]) {
            Some((_, b, Built::Tucker(f))) => Ok((f.clone(), b.clone())),
            _ => Err(BundleError::Manifest(format!(
                "merge partner '{name}' has no Tucker factors"
            ))),
        }
    };

    let mut layers = Vec::with_capacity(plan.entries.len());
    for (e, (w, bias, b)) in plan.entries.iter().zip(&built) {
        let name = &e.spec.name;
        let stem = file_stem(name);
        let mut files = Vec::new();
        let mut put = |suffix: &str, t: &Tensor4| -> Result<(), BundleError> {
            let file = format!("{stem}.{suffix}.bin");
            write_tensor(name, &out.join(&file), t)?;
            files.push(file);
            Ok(())
        };
        let mut truncation = None;
        let err = match b {
            Built::Original if matches!(e.decision, Decision::MergedHost { .. }) => {
                let chain = host_chain(&e.spec, &e.decision, w, bias.clone(), &tucker_of)?;
                let (m, hb) = compose(&chain)?;
                put("weight", &Tensor4::from_matrix(&m))?;
                if let Some(hb) = &hb {
                    put(
                        "bias",
                        &Tensor4::new([1, hb.len(), 1, 1], hb.clone())
                            .map_err(|e| layer_err(name, e))?,
                    )?;
                }
                0.0
            }
            Built::Original => 0.0,
            Built::Svd(f) => {
                put("w0", &Tensor4::from_matrix(&f.w0))?;
                put("w1", &Tensor4::from_matrix(&f.w1))?;
                relative_error(w, &Tensor4::from_matrix(&f.reconstruct()))
                    .map_err(|x| layer_err(name, x))?
            }
            Built::Tucker(f) => {
                put("first", &Tensor4::from_matrix(&f.first))?;
                put("core", &f.core)?;
                put("last", &Tensor4::from_matrix(&f.last))?;
                relative_error(w, &f.reconstruct()).map_err(|x| layer_err(name, x))?
            }
            Built::Grouped { grouped, vanilla } => {
                put("first", &Tensor4::from_matrix(&grouped.first))?;
                put("core", &grouped.core)?;
                put("last", &Tensor4::from_matrix(&grouped.last))?;
                let sum = grouped
                    .to_branched()
                    .map_err(|x| layer_err(name, x))?
                    .reconstruct_sum();
                truncation = Some(
                    relative_error(&vanilla.reconstruct(), &sum).map_err(|x| layer_err(name, x))?,
                );
                relative_error(w, &sum).map_err(|x| layer_err(name, x))?
            }
        };
        let frozen_mask = match &e.decision {
            Decision::Frozen { mask, .. } => mask.clone(),
            _ => Vec::new(),
        };
        let groups = match e.decision {
            Decision::Branched { branches, .. } => branches,
            _ => e.spec.groups,
        };
        layers.push(LayerRecord {
            name: name.clone(),
            scheme: scheme_name(&e.decision).into(),
            ranks: decision_ranks(&e.decision),
            relative_error: err,
            files,
            stride: e.spec.stride,
            padding: e.spec.padding,
            groups,
            frozen_mask,
            branch_truncation_error: truncation,
            spec: e.spec.clone(),
            decision: e.decision.clone(),
        });
    }

    let manifest = Manifest {
        model: plan.model.clone(),
        alpha: plan.alpha,
        seed: opts.seed,
        transform: plan.transform.clone(),
        weights: opts.weights.clone(),
        hooi_sweeps: opts.hooi_sweeps,
        layers,
    };
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    std::fs::write(&path, text).map_err(|source| BundleError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(manifest)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerifyMode {
    Reconstruct,
    Forward,
    BranchEquiv,
    MergeEquiv,
}

impl VerifyMode {
    pub fn name(self) -> &'static str {
        match self {
            VerifyMode::Reconstruct => "reconstruct",
            VerifyMode::Forward => "forward",
            VerifyMode::BranchEquiv => "branch-equiv",
            VerifyMode::MergeEquiv => "merge-equiv",
        }
    }

    pub fn tolerance(self) -> f64 {
        match self {
            VerifyMode::Reconstruct => RECONSTRUCT_TOL,
            VerifyMode::Forward | VerifyMode::BranchEquiv => FORWARD_TOL,
            VerifyMode::MergeEquiv => MERGE_TOL,
        }
    }

    fn applies(self, scheme: &str) -> bool {
        match self {
            VerifyMode::Reconstruct => true,
            VerifyMode::Forward => scheme != "original" && scheme != "merged_host",
            VerifyMode::BranchEquiv => scheme == "branched",
            VerifyMode::MergeEquiv => scheme == "merged_host",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub layer: String,
    pub value: f64,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub mode: VerifyMode,
    pub tolerance: f64,
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Factors of one layer read back from a bundle.
enum Loaded {
    Original,
    Svd(SvdFactors),
    Tucker(TuckerFactors),
    Grouped(GroupedConvStack),
    Host {
        weight: Matrix,
        bias: Option<Vec<f64>>,
    },
}

fn load_layer(dir: &Path, rec: &LayerRecord) -> Result<Loaded, BundleError> {
    let stem = file_stem(&rec.name);
    let need = |suffix: &str| -> Result<Tensor4, BundleError> {
        let file = format!("{stem}.{suffix}.bin");
        if !rec.files.contains(&file) {
            return Err(layer_err(
                &rec.name,
                format!("manifest lists no factor file '{file}'"),
            ));
        }
        let path = dir.join(&file);
        if !path.exists() {
            return Err(layer_err(
                &rec.name,
                format!("missing factor file '{file}'"),
            ));
        }
        read_tensor(&rec.name, &path)
    };
    let mat = |suffix: &str| -> Result<Matrix, BundleError> {
        need(suffix)?
            .to_matrix()
            .map_err(|e| layer_err(&rec.name, e))
    };
    Ok(match rec.scheme.as_str() {
        "original" => Loaded::Original,
        "svd" | "frozen_svd" => Loaded::Svd(SvdFactors {
            w0: mat("w0")?,
            w1: mat("w1")?,
        }),
        "tucker" | "frozen_tucker" | "merged_core" => Loaded::Tucker(TuckerFactors {
            first: mat("first")?,
            core: need("core")?,
            last: mat("last")?,
        }),
        "branched" => Loaded::Grouped(GroupedConvStack {
            first: mat("first")?,
            core: need("core")?,
            last: mat("last")?,
            groups: rec.groups,
        }),
        "merged_host" => {
            let bias = if rec.files.iter().any(|f| f.ends_with(".bias.bin")) {
                Some(need("bias")?.into_data())
            } else {
                None
            };
            Loaded::Host {
                weight: mat("weight")?,
                bias,
            }
        }
        other => return Err(layer_err(&rec.name, format!("unknown scheme '{other}'"))),
    })
}

fn shape_err(layer: &str, e: impl std::fmt::Display) -> BundleError {
    layer_err(layer, format!("factor shapes inconsistent: {e}"))
}

fn verify_input(spec: &LayerSpec, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xf0f0);
    match spec.kind {
        LayerKind::Linear => FeatureMap::random([2, spec.in_channels, 1, 1], &mut rng),
        LayerKind::Conv => {
            let min = spec.kernel.saturating_sub(2 * spec.padding).max(1);
            let h = spec.input_hw[0].min(VERIFY_HW).max(min);
            let w = spec.input_hw[1].min(VERIFY_HW).max(min);
            FeatureMap::random([2, spec.in_channels, h, w], &mut rng)
        }
    }
}

fn reference(
    spec: &LayerSpec,
    x: &FeatureMap,
    w: &Tensor4,
    bias: Option<&[f64]>,
) -> Result<FeatureMap, NnError> {
    match spec.kind {
        LayerKind::Linear => linear(
            x,
            &w.to_matrix().map_err(|e| NnError::Shape(e.to_string()))?,
            bias,
        ),
        LayerKind::Conv => conv2d_bias(x, w, bias, spec.stride, spec.padding, 1),
    }
}

/// Runs one verification suite over a bundle directory.
pub fn verify_bundle(
    dir: &Path,
    mode: VerifyMode,
    seed_override: Option<u64>,
) -> Result<VerifyReport, BundleError> {
    let manifest = Manifest::load(dir)?;
    let seed = seed_override.unwrap_or(manifest.seed);
    let weights = match &manifest.weights {
        WeightSource::Seeded { .. } => WeightSource::Seeded { seed },
        other => other.clone(),
    };
    let targets: Vec<&LayerRecord> = manifest
        .layers
        .iter()
        .filter(|l| mode.applies(&l.scheme))
        .collect();
    if targets.is_empty() {
        return Err(BundleError::Manifest(format!(
            "no layers in this bundle support the {} check",
            mode.name()
        )));
    }
    let tol = mode.tolerance();
    let mut checks = Vec::new();
    for rec in targets {
        let name = &rec.name;
        let loaded = load_layer(dir, rec)?;
        let check = |value: f64, passed: bool, note: Option<String>| Check {
            layer: name.clone(),
            value,
            passed,
            note,
        };
        match mode {
            VerifyMode::Reconstruct => {
                let (w, bias) = weights.load(&rec.spec)?;
                let err = match &loaded {
                    Loaded::Original => 0.0,
                    Loaded::Svd(f) => {
                        let m = f.w0.matmul(&f.w1).map_err(|e| shape_err(name, e))?;
                        relative_error(&w, &Tensor4::from_matrix(&m))
                            .map_err(|e| shape_err(name, e))?
                    }
                    Loaded::Tucker(f) => {
                        let r =
                            crate::tensor::mode_product(&f.core, &f.first, crate::tensor::Mode::C)
                                .and_then(|t| {
                                    crate::tensor::mode_product(
                                        &t,
                                        &f.last.transpose(),
                                        crate::tensor::Mode::S,
                                    )
                                })
                                .map_err(|e| shape_err(name, e))?;
                        relative_error(&w, &r).map_err(|e| shape_err(name, e))?
                    }
                    Loaded::Grouped(g) => {
                        let sum = g
                            .to_branched()
                            .map_err(|e| shape_err(name, e))?
                            .reconstruct_sum();
                        relative_error(&w, &sum).map_err(|e| shape_err(name, e))?
                    }
                    Loaded::Host { weight, bias: hb } => {
                        let expected = host_expected(&manifest, dir, rec, &w, bias)?;
                        let got = Tensor4::from_matrix(weight);
                        let mut e = relative_error(&Tensor4::from_matrix(&expected.0), &got)
                            .map_err(|e| shape_err(name, e))?;
                        if expected.1 != *hb {
                            e = e.max(1.0);
                        }
                        e
                    }
                };
                let recorded = rec.relative_error;
                let ok = (err - recorded).abs() <= RECONSTRUCT_TOL * recorded.abs().max(1.0);
                checks.push(check(
                    err,
                    ok,
                    (!ok).then(|| format!("manifest records {recorded:e}")),
                ));
            }
            VerifyMode::Forward => {
                let x = verify_input(&rec.spec, seed);
                let (stack, rec_w) = match &loaded {
                    Loaded::Svd(f) => {
                        let d = DecomposedLayer::svd(rec.spec.clone(), f.clone(), None);
                        (
                            d.to_stack(),
                            Tensor4::from_matrix(
                                &f.w0.matmul(&f.w1).map_err(|e| shape_err(name, e))?,
                            ),
                        )
                    }
                    Loaded::Tucker(f) => {
                        let d = DecomposedLayer::tucker(rec.spec.clone(), f.clone(), None);
                        let r =
                            crate::tensor::mode_product(&f.core, &f.first, crate::tensor::Mode::C)
                                .and_then(|t| {
                                    crate::tensor::mode_product(
                                        &t,
                                        &f.last.transpose(),
                                        crate::tensor::Mode::S,
                                    )
                                })
                                .map_err(|e| shape_err(name, e))?;
                        (d.to_stack(), r)
                    }
                    Loaded::Grouped(g) => {
                        let sum = g
                            .to_branched()
                            .map_err(|e| shape_err(name, e))?
                            .reconstruct_sum();
                        (g.to_stack(rec.stride, rec.padding, None), sum)
                    }
                    Loaded::Original | Loaded::Host { .. } => unreachable!("filtered by mode"),
                };
                let got = run_stack(&stack, &x).map_err(|e| shape_err(name, e))?;
                let want =
                    reference(&rec.spec, &x, &rec_w, None).map_err(|e| shape_err(name, e))?;
                let diff = got.relative_diff(&want);
                checks.push(check(diff, diff <= tol, None));
            }
            VerifyMode::BranchEquiv => {
                let Loaded::Grouped(g) = &loaded else {
                    unreachable!("filtered by mode")
                };
                let x = verify_input(&rec.spec, seed);
                let grouped = run_stack(&g.to_stack(rec.stride, rec.padding, None), &x)
                    .map_err(|e| shape_err(name, e))?;
                let branches = g.to_branched().map_err(|e| shape_err(name, e))?;
                let summed =
                    run_branch_sum(&branches.branch_stacks(rec.stride, rec.padding, None), &x)
                        .map_err(|e| shape_err(name, e))?;
                let diff = grouped.relative_diff(&summed);
                let note = rec.branch_truncation_error.map(|t| {
                    format!("branch sum differs from undivided Tucker by {t:.3e} (relative)")
                });
                checks.push(check(diff, diff <= tol, note));
            }
            VerifyMode::MergeEquiv => {
                let Loaded::Host { weight, bias: hb } = &loaded else {
                    unreachable!("filtered by mode")
                };
                let (w, bias) = weights.load(&rec.spec)?;
                let chain = host_chain_from_bundle(&manifest, dir, rec, &w, bias)?;
                // A host absorbing a `last` factor reads the core's r2 channels.
                let mut input_spec = rec.spec.clone();
                input_spec.in_channels = chain[0].0.rows();
                let x = verify_input(&input_spec, seed);
                let mut seq = Vec::new();
                for (i, (m, b)) in chain.iter().enumerate() {
                    let host = i == chain.len() - 1 - usize::from(absorbs_first(rec));
                    seq.push(StackLayer::Conv(ConvLayer {
                        weight: Tensor4::from_matrix(m),
                        bias: b.clone(),
                        stride: if host { rec.stride } else { 1 },
                        padding: if host { rec.padding } else { 0 },
                        groups: 1,
                    }));
                }
                let sequential = run_stack(&seq, &x).map_err(|e| shape_err(name, e))?;
                let merged = conv2d_bias(
                    &x,
                    &Tensor4::from_matrix(weight),
                    hb.as_deref(),
                    rec.stride,
                    rec.padding,
                    1,
                )
                .map_err(|e| shape_err(name, e))?;
                let diff = merged.relative_diff(&sequential);
                checks.push(check(diff, diff <= tol, None));
            }
        }
    }
    Ok(VerifyReport {
        mode,
        tolerance: tol,
        checks,
    })
}

fn absorbs_first(rec: &LayerRecord) -> bool {
    matches!(
        &rec.decision,
        Decision::MergedHost {
            absorbs_first_of: Some(_),
            ..
        }
    )
}

fn host_chain_from_bundle(
    manifest: &Manifest,
    dir: &Path,
    rec: &LayerRecord,
    w: &Tensor4,
    bias: Option<Vec<f64>>,
) -> Result<Vec<Affine>, BundleError> {
    let tucker_of = |partner: &str| -> Result<(TuckerFactors, Bias), BundleError> {
        let prec = manifest.layer(partner).ok_or_else(|| {
            layer_err(
                &rec.name,
                format!("merge partner '{partner}' missing from manifest"),
            )
        })?;
        match load_layer(dir, prec)? {
            Loaded::Tucker(f) => {
                let b = match &manifest.weights {
                    WeightSource::Seeded { .. } => seeded_bias(&prec.spec, manifest.seed),
                    src => src.load(&prec.spec)?.1,
                };
                Ok((f, b))
            }
            _ => Err(layer_err(
                &rec.name,
                format!("merge partner '{partner}' has no Tucker factors"),
            )),
        }
    };
    host_chain(&rec.spec, &rec.decision, w, bias, &tucker_of)
}

fn host_expected(
    manifest: &Manifest,
    dir: &Path,
    rec: &LayerRecord,
    w: &Tensor4,
    bias: Option<Vec<f64>>,
) -> Result<(Matrix, Option<Vec<f64>>), BundleError> {
    compose(&host_chain_from_bundle(manifest, dir, rec, w, bias)?)
}
