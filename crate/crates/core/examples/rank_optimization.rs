//! Scans ranks of a single 3×3 convolution on the reference engine and picks
//! the rank just past the largest drop in measured time.
//!
//! cargo run --release --example rank_optimization

use lrd::planner::{optimize_rank, tucker_ranks_for_ratio, LayerSpec, NnProfiler, RankChoice};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = LayerSpec::conv("layer3.0.conv2", 64, 64, 3, 1, 1, 14);
    let (r1, r2) = tucker_ranks_for_ratio(64, 64, 3, 2.0, 1.0)?;
    let r_init = r1.max(r2);
    let r_min = (r_init as f64 * 0.75).ceil() as usize;
    let mut profiler = NnProfiler::new(5, 14, 0)?;
    let search = optimize_rank(&spec, r_init, r_min, 1, &mut profiler)?;

    println!("original {:.3} ms", search.original_time * 1e3);
    for (rank, t) in &search.times {
        println!("rank {rank:>3}  {:.3} ms", t * 1e3);
    }
    match search.choice {
        RankChoice::Rank(r) => println!("chosen rank {r}"),
        RankChoice::Passthrough => println!("no rank beats the original layer"),
    }
    Ok(())
}
