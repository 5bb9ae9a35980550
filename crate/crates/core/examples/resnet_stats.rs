//! Parameter and FLOP accounting for the built-in ResNets, plus a per-stage
//! breakdown of ResNet-50.
//!
//! cargo run --example resnet_stats

use lrd::fixtures;
use lrd::planner::{layer_flops, layer_params};
use lrd::report::{Report, ReportRow};

fn main() {
    let models: Vec<_> = [50, 101, 152]
        .into_iter()
        .map(|d| fixtures::resnet(d).expect("built-in model"))
        .collect();
    let rows = models.iter().map(ReportRow::for_model).collect();
    print!("{}", Report { rows }.to_table());

    println!();
    for stage in ["conv1", "layer1", "layer2", "layer3", "layer4", "fc"] {
        let (params, flops) = models[0]
            .layers()
            .filter(|l| l.spec.name.split('.').next() == Some(stage))
            .fold((0, 0), |(p, f), l| {
                (p + layer_params(&l.spec), f + layer_flops(&l.spec))
            });
        println!("{stage:<7} {:>10} params {:>14} flops", params, flops);
    }
}
