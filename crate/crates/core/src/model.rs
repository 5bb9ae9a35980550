//! Model files: an ordered node list of weight layers plus the structural
//! entries (activations, residual additions, pooling) that decide which
//! layers are adjacent.
//!
//! A residual block is the run of layers sharing a `block` name. Its
//! `shortcut` layer (if any) reads the block input; the closing `add` node
//! joins the main path with the shortcut (or the block input itself).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::conv_output_size;
use crate::planner::{LayerKind, LayerSpec};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("nodes[{index}] ({name}): field `{field}`: {message}")]
    Invalid {
        index: usize,
        name: String,
        field: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Main,
    /// Projection on the residual path; decomposed but not part of the
    /// reported layer depth.
    Shortcut,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerNode {
    #[serde(flatten)]
    pub spec: LayerSpec,
    #[serde(default)]
    pub role: Role,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Node {
    Layer(LayerNode),
    Relu,
    Add,
    MaxPool {
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    /// Global average pooling to 1×1.
    AvgPool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelFile {
    pub name: String,
    pub input_resolution: usize,
    pub input_channels: usize,
    pub nodes: Vec<Node>,
}

/// Block being validated: name, input channels, input hw and the shortcut
/// output (channels, hw) once seen.
type OpenBlock = (String, usize, [usize; 2], Option<(usize, [usize; 2])>);

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let model: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        model.validate()?;
        Ok(model)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerNode> {
        self.nodes.iter().filter_map(|n| match n {
            Node::Layer(l) => Some(l),
            _ => None,
        })
    }

    pub fn layer(&self, name: &str) -> Option<&LayerNode> {
        self.layers().find(|l| l.spec.name == name)
    }

    /// Checks layer specs, unique names, and that channel counts and
    /// spatial sizes chain through the node list.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut names = std::collections::HashSet::new();
        let mut channels = self.input_channels;
        let mut hw = [self.input_resolution, self.input_resolution];
        let mut block: Option<OpenBlock> = None;

        for (index, node) in self.nodes.iter().enumerate() {
            let invalid = |name: &str, field: &'static str, message: String| ModelError::Invalid {
                index,
                name: name.to_string(),
                field,
                message,
            };
            match node {
                Node::Layer(l) => {
                    let s = &l.spec;
                    s.validate()
                        .map_err(|e| invalid(&s.name, "spec", e.to_string()))?;
                    if !names.insert(s.name.clone()) {
                        return Err(invalid(&s.name, "name", "duplicate layer name".into()));
                    }
                    if let Some(b) = &l.block {
                        if block.as_ref().map(|x| &x.0) != Some(b) {
                            block = Some((b.clone(), channels, hw, None));
                        }
                    }
                    let (expect_c, expect_hw) = match l.role {
                        Role::Main => (channels, hw),
                        Role::Shortcut => match &block {
                            Some((_, c, h, _)) => (*c, *h),
                            None => {
                                return Err(invalid(
                                    &s.name,
                                    "role",
                                    "shortcut layer outside a block".into(),
                                ))
                            }
                        },
                    };
                    let flat = match s.kind {
                        LayerKind::Linear => expect_c * expect_hw[0] * expect_hw[1],
                        LayerKind::Conv => expect_c,
                    };
                    if s.in_channels != flat {
                        return Err(invalid(
                            &s.name,
                            "in_channels",
                            format!("expected {flat}, got {}", s.in_channels),
                        ));
                    }
                    if s.kind == LayerKind::Conv && s.input_hw != expect_hw {
                        return Err(invalid(
                            &s.name,
                            "input_hw",
                            format!("expected {expect_hw:?}, got {:?}", s.input_hw),
                        ));
                    }
                    let out_hw = s.output_hw().expect("validated spec");
                    match l.role {
                        Role::Main => {
                            channels = s.out_channels;
                            hw = out_hw;
                        }
                        Role::Shortcut => {
                            if let Some(b) = block.as_mut() {
                                b.3 = Some((s.out_channels, out_hw));
                            }
                        }
                    }
                }
                Node::Add => {
                    let Some((name, c, h, shortcut)) = block.take() else {
                        return Err(invalid("add", "op", "add outside a block".into()));
                    };
                    let (sc, sh) = shortcut.unwrap_or((c, h));
                    if (sc, sh) != (channels, hw) {
                        return Err(invalid(
                            &name,
                            "op",
                            format!("residual shape {sc}x{sh:?} does not match main path {channels}x{hw:?}"),
                        ));
                    }
                }
                Node::MaxPool {
                    kernel,
                    stride,
                    padding,
                } => {
                    let out = (
                        conv_output_size(hw[0], *kernel, (*stride).max(1), *padding),
                        conv_output_size(hw[1], *kernel, (*stride).max(1), *padding),
                    );
                    match out {
                        (Some(a), Some(b)) if *stride > 0 && *kernel > 0 => hw = [a, b],
                        _ => {
                            return Err(invalid(
                                "max_pool",
                                "kernel",
                                format!("does not fit {hw:?}"),
                            ))
                        }
                    }
                }
                Node::AvgPool => hw = [1, 1],
                Node::Relu => {}
            }
        }
        Ok(())
    }
}
