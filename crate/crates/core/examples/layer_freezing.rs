//! Freezes the outer Tucker factors and refits the core, showing that the
//! refit core is the least-squares optimum for those bases.
//!
//! cargo run --example layer_freezing

use lrd::decompose::{decompose_tucker2, relative_error, TuckerFactors};
use lrd::planner::LayerSpec;
use lrd::tensor::Tensor4;
use lrd::transforms::freeze_and_refit;
use lrd::weights::seeded_weight;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LayerSpec::conv("conv", 32, 48, 3, 1, 1, 8);
    let w = seeded_weight(&spec, 11);
    let f = decompose_tucker2(&w, 12, 16)?;

    // Perturb the core as fine-tuning might, then refit it.
    let [a, b, h, k] = f.core.dims();
    let noisy = TuckerFactors {
        core: Tensor4::from_fn([a, b, h, k], |[i, j, p, q]| {
            f.core.get(i, j, p, q) * (1.0 + 0.1 * ((i + j + p + q) % 3) as f64)
        })?,
        ..f.clone()
    };
    let refit = freeze_and_refit(&w, &noisy)?;

    println!(
        "hosvd core     {:.6}",
        relative_error(&w, &f.reconstruct())?
    );
    println!(
        "perturbed core {:.6}",
        relative_error(&w, &noisy.reconstruct())?
    );
    println!(
        "refit core     {:.6}",
        relative_error(&w, &refit.reconstruct())?
    );
    Ok(())
}
