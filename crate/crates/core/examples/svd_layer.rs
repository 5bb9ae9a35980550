//! Factorizes a seeded 1×1 convolution with truncated SVD and prints how
//! the reconstruction error falls as the rank grows.
//!
//! cargo run --example svd_layer

use lrd::decompose::{decompose_svd, relative_error};
use lrd::planner::{svd_rank_for_ratio, LayerSpec};
use lrd::weights::seeded_weight;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LayerSpec::conv("conv", 256, 64, 1, 1, 0, 56);
    let w = seeded_weight(&spec, 1).to_matrix()?;
    let target = svd_rank_for_ratio(256, 64, 2.0)?;
    println!(
        "weight {}x{}, rank for 2x compression: {target}",
        w.rows(),
        w.cols()
    );
    for rank in [4, 16, target, 32, 64] {
        let f = decompose_svd(&w, rank)?;
        let err = relative_error(&w, &f.reconstruct())?;
        println!(
            "rank {rank:>3}  params {:>6}  error {err:.4}",
            f.param_count()
        );
    }
    Ok(())
}
