//! Plans ResNet-50 at 2× compression under both rank policies and prints
//! the before/after table.
//!
//! cargo run --example rank_planning

use lrd::fixtures;
use lrd::planner::{plan_model, Decision, Policy, RankRule};
use lrd::report::{Report, ReportRow};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = fixtures::resnet(50).expect("built-in model");
    let budget = plan_model(&model, 2.0, &Policy::default())?;
    let fraction = plan_model(
        &model,
        2.0,
        &Policy {
            rank_rule: RankRule::ChannelFraction,
            ..Policy::default()
        },
    )?;

    let mut rows = vec![ReportRow::for_model(&model), ReportRow::for_plan(&budget)];
    let mut row = ReportRow::for_plan(&fraction);
    row.variant = "fraction".into();
    rows.push(row);
    print!("{}", Report { rows }.to_table());

    for e in budget.entries.iter().take(6) {
        let d = match e.decision {
            Decision::Svd { rank } => format!("svd r={rank}"),
            Decision::Tucker { r1, r2 } => format!("tucker ({r1}, {r2})"),
            ref other => format!("{other:?}"),
        };
        println!("{:<22} {d}", e.spec.name);
    }
    Ok(())
}
