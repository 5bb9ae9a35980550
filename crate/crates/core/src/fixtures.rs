//! Built-in ResNet model descriptions (bottleneck ResNet-50/101/152 at
//! 224×224 with a 1001-way classifier).
//!
//! The same descriptions are checked in as JSON under `fixtures/`; a test
//! keeps the two in sync (`LRD_BLESS=1` rewrites the files).

use crate::model::{LayerNode, ModelFile, Node, Role};
use crate::planner::LayerSpec;

pub const RESNET_DEPTHS: [usize; 3] = [50, 101, 152];
pub const NUM_CLASSES: usize = 1001;

fn stage_blocks(depth: usize) -> Option<[usize; 4]> {
    match depth {
        50 => Some([3, 4, 6, 3]),
        101 => Some([3, 4, 23, 3]),
        152 => Some([3, 8, 36, 3]),
        _ => None,
    }
}

/// Bottleneck ResNet of the given depth, or `None` for other depths.
pub fn resnet(depth: usize) -> Option<ModelFile> {
    let blocks = stage_blocks(depth)?;
    let mut nodes = Vec::new();
    let layer = |spec: LayerSpec, role: Role, block: Option<&str>| {
        Node::Layer(LayerNode {
            spec,
            role,
            block: block.map(str::to_string),
        })
    };

    nodes.push(layer(
        LayerSpec::conv("conv1", 3, 64, 7, 2, 3, 224),
        Role::Main,
        None,
    ));
    nodes.push(Node::Relu);
    nodes.push(Node::MaxPool {
        kernel: 3,
        stride: 2,
        padding: 1,
    });

    let mut channels = 64;
    let mut hw = 56;
    for (stage, &count) in blocks.iter().enumerate() {
        let planes = 64 << stage;
        for b in 0..count {
            let name = format!("layer{}.{b}", stage + 1);
            let stride = if b == 0 && stage > 0 { 2 } else { 1 };
            let block = Some(name.as_str());
            let out_hw = hw / stride;
            nodes.push(layer(
                LayerSpec::conv(&format!("{name}.conv1"), channels, planes, 1, 1, 0, hw),
                Role::Main,
                block,
            ));
            nodes.push(Node::Relu);
            nodes.push(layer(
                LayerSpec::conv(&format!("{name}.conv2"), planes, planes, 3, stride, 1, hw),
                Role::Main,
                block,
            ));
            nodes.push(Node::Relu);
            nodes.push(layer(
                LayerSpec::conv(
                    &format!("{name}.conv3"),
                    planes,
                    planes * 4,
                    1,
                    1,
                    0,
                    out_hw,
                ),
                Role::Main,
                block,
            ));
            if b == 0 {
                nodes.push(layer(
                    LayerSpec::conv(
                        &format!("{name}.downsample.0"),
                        channels,
                        planes * 4,
                        1,
                        stride,
                        0,
                        hw,
                    ),
                    Role::Shortcut,
                    block,
                ));
            }
            nodes.push(Node::Add);
            nodes.push(Node::Relu);
            channels = planes * 4;
            hw = out_hw;
        }
    }
    nodes.push(Node::AvgPool);
    nodes.push(layer(
        LayerSpec::linear("fc", channels, NUM_CLASSES, true),
        Role::Main,
        None,
    ));

    Some(ModelFile {
        name: format!("resnet{depth}"),
        input_resolution: 224,
        input_channels: 3,
        nodes,
    })
}

/// Resolves `resnet50`, `resnet101` or `resnet152`.
pub fn by_name(name: &str) -> Option<ModelFile> {
    let depth = name.strip_prefix("resnet")?.parse().ok()?;
    resnet(depth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{layer_flops, layer_params};
    use std::path::PathBuf;

    fn fixture_path(depth: usize) -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/resnet{depth}.json"))
    }

    #[test]
    fn fixtures_validate_and_match_files() {
        for depth in RESNET_DEPTHS {
            let model = resnet(depth).unwrap();
            model.validate().unwrap();
            let path = fixture_path(depth);
            let json = model.to_json() + "\n";
            if std::env::var_os("LRD_BLESS").is_some() {
                std::fs::write(&path, &json).unwrap();
            }
            let on_disk = std::fs::read_to_string(&path).unwrap();
            assert_eq!(
                on_disk,
                json,
                "{} is stale; rerun with LRD_BLESS=1",
                path.display()
            );
        }
    }

    #[test]
    fn main_path_depth_matches_name() {
        for depth in RESNET_DEPTHS {
            let model = resnet(depth).unwrap();
            let main = model.layers().filter(|l| l.role == Role::Main).count();
            assert_eq!(main, depth);
        }
    }

    #[test]
    fn resnet50_totals() {
        let model = resnet(50).unwrap();
        let params: u64 = model.layers().map(|l| layer_params(&l.spec)).sum();
        let flops: u64 = model.layers().map(|l| layer_flops(&l.spec)).sum();
        assert_eq!(params, 25_505_961);
        assert!((flops as f64 / 1e9 - 8.178).abs() < 0.01, "{flops}");
    }

    #[test]
    fn unknown_names() {
        assert!(by_name("resnet18").is_none());
        assert!(by_name("vgg16").is_none());
        assert_eq!(by_name("resnet101").unwrap().name, "resnet101");
    }
}
