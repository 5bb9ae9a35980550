//! Whole-model compression plans.

use serde::{Deserialize, Serialize};

use super::profile::RankSearch;
use super::ranks::{svd_rank_for_ratio, tucker_ranks_for_ratio};
use super::{layer_flops, layer_params, LayerKind, LayerSpec, PlanError};
use crate::model::{ModelFile, Role};

/// How ranks are derived from `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    /// Largest ranks whose factor parameters fit `params / alpha`.
    #[default]
    Budget,
    /// Each channel rank is the channel count divided by `alpha`, floored.
    ChannelFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Keep the network's first convolution as is.
    pub skip_first_conv: bool,
    /// Layers whose computed rank falls below this stay original.
    pub min_rank: usize,
    /// `r2 = round(beta · r1)` for Tucker layers.
    pub beta: f64,
    pub rank_rule: RankRule,
}

impl Default for Policy {
    fn default() -> Self {
        Self {
            skip_first_conv: true,
            min_rank: 1,
            beta: 1.0,
            rank_rule: RankRule::Budget,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Factorization {
    Svd { rank: usize },
    Tucker { r1: usize, r2: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Decision {
    Passthrough,
    Svd {
        rank: usize,
    },
    Tucker {
        r1: usize,
        r2: usize,
    },
    /// A factorization whose masked factor layers are held fixed.
    Frozen {
        base: Factorization,
        mask: Vec<bool>,
    },
    /// Tucker with a grouped core of `branches` groups.
    Branched {
        r1: usize,
        r2: usize,
        branches: usize,
    },
    /// A 1×1 layer that absorbed a neighbouring Tucker factor.
    MergedHost {
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
        absorbs_last_of: Option<String>,
        absorbs_first_of: Option<String>,
    },
    /// A Tucker layer with one or both 1×1 factors absorbed by neighbours.
    MergedCore {
        r1: usize,
        r2: usize,
        first_absorbed: bool,
        last_absorbed: bool,
    },
}

impl Decision {
    /// The plain factorization behind this decision, if any.
    pub fn factorization(&self) -> Option<Factorization> {
        match *self {
            Decision::Svd { rank } => Some(Factorization::Svd { rank }),
            Decision::Tucker { r1, r2 }
            | Decision::Branched { r1, r2, .. }
            | Decision::MergedCore { r1, r2, .. } => Some(Factorization::Tucker { r1, r2 }),
            Decision::Frozen { base, .. } => Some(base),
            Decision::Passthrough | Decision::MergedHost { .. } => None,
        }
    }
}

/// The layer specs that implement `decision` for `spec`, in execution order.
pub fn factor_specs(spec: &LayerSpec, decision: &Decision) -> Vec<LayerSpec> {
    let named = |suffix: &str| format!("{}.{suffix}", spec.name);
    let pointwise =
        |name: String, c: usize, s: usize, input_hw: [usize; 2], bias: bool| LayerSpec {
            name,
            kind: spec.kind,
            in_channels: c,
            out_channels: s,
            kernel: 1,
            stride: 1,
            padding: 0,
            groups: 1,
            has_bias: bias,
            input_hw,
        };
    let out_hw = spec.output_hw().unwrap_or([1, 1]);
    let tucker = |r1: usize, r2: usize, groups: usize, first: bool, last: bool| {
        let mut v = Vec::new();
        if first {
            v.push(pointwise(
                named("first"),
                spec.in_channels,
                r1,
                spec.input_hw,
                false,
            ));
        }
        v.push(LayerSpec {
            name: named("core"),
            in_channels: r1,
            out_channels: r2,
            groups,
            has_bias: false,
            ..spec.clone()
        });
        if last {
            v.push(pointwise(
                named("last"),
                r2,
                spec.out_channels,
                out_hw,
                spec.has_bias,
            ));
        }
        v
    };
    let svd = |rank: usize| {
        vec![
            pointwise(named("w0"), spec.in_channels, rank, spec.input_hw, false),
            LayerSpec {
                name: named("w1"),
                in_channels: rank,
                out_channels: spec.out_channels,
                ..spec.clone()
            },
        ]
    };
    match decision {
        Decision::Passthrough => vec![spec.clone()],
        Decision::Svd { rank } => svd(*rank),
        Decision::Tucker { r1, r2 } => tucker(*r1, *r2, 1, true, true),
        Decision::Frozen { base, .. } => match *base {
            Factorization::Svd { rank } => svd(rank),
            Factorization::Tucker { r1, r2 } => tucker(r1, r2, 1, true, true),
        },
        Decision::Branched { r1, r2, branches } => tucker(*r1, *r2, *branches, true, true),
        Decision::MergedHost {
            in_channels,
            out_channels,
            has_bias,
            ..
        } => vec![LayerSpec {
            in_channels: *in_channels,
            out_channels: *out_channels,
            has_bias: *has_bias,
            ..spec.clone()
        }],
        Decision::MergedCore {
            r1,
            r2,
            first_absorbed,
            last_absorbed,
        } => tucker(*r1, *r2, 1, !first_absorbed, !last_absorbed),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub spec: LayerSpec,
    pub role: Role,
    pub decision: Decision,
    /// Number of layers that replace this one.
    pub layers: usize,
    pub predicted_params: u64,
    pub predicted_flops: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<RankSearch>,
}

impl PlanEntry {
    pub fn new(spec: LayerSpec, role: Role, decision: Decision) -> Self {
        let mut e = Self {
            spec,
            role,
            decision,
            layers: 0,
            predicted_params: 0,
            predicted_flops: 0,
            warnings: Vec::new(),
            profile: None,
        };
        e.refresh();
        e
    }

    /// Recomputes the predicted counts from the decision.
    pub fn refresh(&mut self) {
        let specs = factor_specs(&self.spec, &self.decision);
        self.layers = specs.len();
        self.predicted_params = specs.iter().map(layer_params).sum();
        self.predicted_flops = specs.iter().map(layer_flops).sum();
    }

    pub fn set_decision(&mut self, decision: Decision) {
        self.decision = decision;
        self.refresh();
    }
}

/// Model-wide counts. Layer counts cover main-path layers only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub layer_count_before: usize,
    pub layer_count_after: usize,
    pub params_before: u64,
    pub params_after: u64,
    pub flops_before: u64,
    pub flops_after: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionPlan {
    pub model: String,
    pub alpha: f64,
    pub policy: Policy,
    pub transform: String,
    pub entries: Vec<PlanEntry>,
    pub totals: Totals,
}

impl CompressionPlan {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn entry(&self, name: &str) -> Option<&PlanEntry> {
        self.entries.iter().find(|e| e.spec.name == name)
    }

    pub fn warnings(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().flat_map(|e| {
            e.warnings
                .iter()
                .map(move |w| (e.spec.name.as_str(), w.as_str()))
        })
    }
}

/// Sums the entries into fresh totals.
pub fn recompute(entries: &[PlanEntry]) -> Totals {
    let mut t = Totals::default();
    for e in entries {
        if e.role == Role::Main {
            t.layer_count_before += 1;
            t.layer_count_after += e.layers;
        }
        t.params_before += layer_params(&e.spec);
        t.params_after += e.predicted_params;
        t.flops_before += layer_flops(&e.spec);
        t.flops_after += e.predicted_flops;
    }
    t
}

fn choose(spec: &LayerSpec, alpha: f64, policy: &Policy) -> Result<Decision, String> {
    if spec.groups != 1 {
        return Err(format!(
            "grouped layer (groups = {}) kept original",
            spec.groups
        ));
    }
    let (c, s, k) = (spec.in_channels, spec.out_channels, spec.kernel);
    let fraction = |n: usize| (n as f64 / alpha).floor() as usize;
    let decision = if k == 1 {
        let rank = match policy.rank_rule {
            RankRule::Budget => svd_rank_for_ratio(c, s, alpha).map_err(|e| e.to_string())?,
            RankRule::ChannelFraction => fraction(c.min(s)),
        };
        if rank < policy.min_rank.max(1) {
            return Err(format!(
                "rank {rank} below minimum {}",
                policy.min_rank.max(1)
            ));
        }
        Decision::Svd { rank }
    } else {
        let (r1, r2) = match policy.rank_rule {
            RankRule::Budget => {
                tucker_ranks_for_ratio(c, s, k, alpha, policy.beta).map_err(|e| e.to_string())?
            }
            RankRule::ChannelFraction => (fraction(c), fraction(s)),
        };
        if r1.min(r2) < policy.min_rank.max(1) {
            return Err(format!(
                "ranks ({r1}, {r2}) below minimum {}",
                policy.min_rank.max(1)
            ));
        }
        if r1 > c || r2 > s {
            return Err(format!("ranks ({r1}, {r2}) exceed channels ({c}, {s})"));
        }
        Decision::Tucker { r1, r2 }
    };
    Ok(decision)
}

/// Decides every weight layer of `model` at compression ratio `alpha`.
///
/// Layers that cannot reach the target become passthrough with a warning.
pub fn plan_model(
    model: &ModelFile,
    alpha: f64,
    policy: &Policy,
) -> Result<CompressionPlan, PlanError> {
    if !(alpha.is_finite() && alpha > 1.0) {
        return Err(PlanError::InvalidAlpha(alpha));
    }
    if !(policy.beta.is_finite() && policy.beta > 0.0) {
        return Err(PlanError::InvalidBeta(policy.beta));
    }
    let mut entries = Vec::new();
    let mut seen_conv = false;
    for node in model.layers() {
        let spec = &node.spec;
        let first_conv = spec.kind == LayerKind::Conv && !seen_conv;
        seen_conv |= spec.kind == LayerKind::Conv;
        let (decision, warning) = if first_conv && policy.skip_first_conv {
            (Decision::Passthrough, None)
        } else {
            match choose(spec, alpha, policy) {
                Ok(d) => (d, None),
                Err(w) => (Decision::Passthrough, Some(w)),
            }
        };
        let mut entry = PlanEntry::new(spec.clone(), node.role, decision);
        entry.warnings.extend(warning);
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(PlanError::EmptyModel);
    }
    let totals = recompute(&entries);
    Ok(CompressionPlan {
        model: model.name.clone(),
        alpha,
        policy: policy.clone(),
        transform: "none".into(),
        entries,
        totals,
    })
}
