//! Deterministic synthetic weights.
//!
//! Every layer draws from its own ChaCha8 stream seeded with
//! `seed ^ fnv1a(layer name)`, so a layer's weights do not depend on which
//! other layers exist or on the order they are generated in. Weights are
//! Kaiming-normal (`std = √(2 / fan_in)`, `fan_in = C/groups · k²`); biases
//! are uniform on `±1/√fan_in`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::planner::LayerSpec;
use crate::tensor::Tensor4;

/// Seed used when neither `LRD_SEED` nor a flag provides one.
pub const DEFAULT_SEED: u64 = 0x1d5e_ed00;

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn layer_rng(spec: &LayerSpec, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(spec.name.as_bytes()))
}

fn fan_in(spec: &LayerSpec) -> usize {
    spec.in_channels / spec.groups * spec.kernel * spec.kernel
}

/// Weight tensor `(C/groups, S, k, k)` for `spec`.
pub fn seeded_weight(spec: &LayerSpec, seed: u64) -> Tensor4 {
    let mut rng = layer_rng(spec, seed);
    let std = (2.0 / fan_in(spec) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    let dims = [
        spec.in_channels / spec.groups,
        spec.out_channels,
        spec.kernel,
        spec.kernel,
    ];
    Tensor4::from_fn(dims, |_| normal.sample(&mut rng)).expect("finite samples")
}

/// Bias vector for `spec`, or `None` when the layer has no bias.
///
/// Drawn after the weights from the same stream.
pub fn seeded_bias(spec: &LayerSpec, seed: u64) -> Option<Vec<f64>> {
    if !spec.has_bias {
        return None;
    }
    let mut rng = layer_rng(spec, seed);
    let n = spec.weight_params() as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit std");
    for _ in 0..n {
        let _: f64 = normal.sample(&mut rng);
    }
    let bound = 1.0 / (fan_in(spec) as f64).sqrt();
    let uniform = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    Some(
        (0..spec.out_channels)
            .map(|_| rng.sample(uniform))
            .collect(),
    )
}
