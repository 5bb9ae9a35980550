//! Merges Tucker first/last factors into neighbouring 1×1 convolutions, at
//! the single-layer level and across a whole ResNet plan.
//!
//! cargo run --example layer_merging

use lrd::fixtures;
use lrd::planner::{plan_model, Policy, RankRule};
use lrd::report::{Report, ReportRow};
use lrd::tensor::Matrix;
use lrd::transforms::{merge_1x1, merge_plan, MergeOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Two chained 1×1 layers collapse into one: x·A·B == x·merge(A, B).
    let a = Matrix::new(3, 2, vec![1.0, 0.5, -1.0, 2.0, 0.0, 1.0])?;
    let b = Matrix::new(2, 2, vec![2.0, 0.0, 1.0, -1.0])?;
    let m = merge_1x1(&a, &b)?;
    println!("merged {}x{}: {:?}", m.rows(), m.cols(), m.data());

    let policy = Policy {
        rank_rule: RankRule::ChannelFraction,
        ..Policy::default()
    };
    let mut rows = Vec::new();
    for depth in [50, 101, 152] {
        let model = fixtures::resnet(depth).expect("built-in model");
        let plan = plan_model(&model, 2.0, &policy)?;
        let merged = merge_plan(&model, &plan, MergeOptions::layer_merging())?;
        rows.push(ReportRow::for_model(&model));
        rows.push(ReportRow::for_plan(&merged));
    }
    print!("{}", Report { rows }.to_table());
    Ok(())
}
