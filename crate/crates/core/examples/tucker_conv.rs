//! Tucker-2 decomposition of a 3×3 convolution: HOSVD against a few HOOI
//! sweeps, then a forward pass through the three-layer factor stack.
//!
//! cargo run --example tucker_conv

use lrd::decompose::{decompose_tucker2, decompose_tucker2_hooi, relative_error, DecomposedLayer};
use lrd::nn::{conv2d, run_stack, FeatureMap};
use lrd::planner::{tucker_ranks_for_ratio, LayerSpec};
use lrd::weights::seeded_weight;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LayerSpec::conv("conv", 64, 64, 3, 1, 1, 14);
    let w = seeded_weight(&spec, 3);
    let (r1, r2) = tucker_ranks_for_ratio(64, 64, 3, 2.0, 1.0)?;
    println!("ranks ({r1}, {r2})");

    let hosvd = decompose_tucker2(&w, r1, r2)?;
    let hooi = decompose_tucker2_hooi(&w, r1, r2, 5)?;
    println!(
        "hosvd error {:.5}",
        relative_error(&w, &hosvd.reconstruct())?
    );
    println!(
        "hooi  error {:.5}",
        relative_error(&w, &hooi.reconstruct())?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = FeatureMap::random([1, 64, 14, 14], &mut rng);
    let layer = DecomposedLayer::tucker(spec, hooi.clone(), None);
    let y = run_stack(&layer.to_stack(), &x)?;
    let reference = conv2d(&x, &hooi.reconstruct(), 1, 1, 1)?;
    println!(
        "factor stack vs reconstructed conv: {:.2e}",
        y.relative_diff(&reference)
    );
    Ok(())
}
