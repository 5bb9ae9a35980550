//! Splits a Tucker factorization into branches and runs them as one grouped
//! convolution. With a block-diagonal core the split is exact; with a dense
//! core the off-diagonal blocks are lost.
//!
//! cargo run --example branched_tucker

use lrd::decompose::{decompose_tucker2, relative_error};
use lrd::nn::{run_branch_sum, run_stack, FeatureMap};
use lrd::planner::LayerSpec;
use lrd::transforms::{block_diagonal_core, branch_tucker, branched_to_grouped};
use lrd::weights::seeded_weight;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LayerSpec::conv("conv", 32, 32, 3, 1, 1, 8);
    let w = seeded_weight(&spec, 5);
    let dense = decompose_tucker2(&w, 16, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = FeatureMap::random([1, 32, 8, 8], &mut rng);

    for n in [2, 4] {
        for (label, f) in [
            ("dense", dense.clone()),
            ("block-diagonal", block_diagonal_core(&dense, n)?),
        ] {
            let branched = branch_tucker(&f, n)?;
            let sum_err = relative_error(&f.reconstruct(), &branched.reconstruct_sum())?;
            let grouped = branched_to_grouped(&branched)?;
            let y_grouped = run_stack(&grouped.to_stack(1, 1, None), &x)?;
            let y_sum = run_branch_sum(&branched.branch_stacks(1, 1, None), &x)?;
            println!(
                "N={n} {label:<14} core params {:>5}  branch-sum error {sum_err:.3}  grouped vs sum {:.1e}",
                grouped.core_param_count(),
                y_grouped.relative_diff(&y_sum)
            );
        }
    }
    Ok(())
}
