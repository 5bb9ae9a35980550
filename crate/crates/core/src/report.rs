//! Summary tables: one row per (model, variant) with layer count, size and
//! cost, and their change against the original model.

use serde::{Deserialize, Serialize};

use crate::model::{ModelFile, Role};
use crate::planner::{layer_flops, layer_params, CompressionPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub variant: String,
    pub layers: usize,
    pub params_m: f64,
    pub flops_b: f64,
    pub delta_params_pct: f64,
    pub delta_flops_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

/// Two decimals, halves away from zero (`0.125 → 0.13`, `-0.125 → -0.13`).
///
/// The nudge absorbs binary representation error in decimal halves such
/// as `43.255`.
pub fn round2(x: f64) -> f64 {
    x.signum() * (x.abs() * 100.0 + 0.5 + 1e-9).floor() / 100.0
}

fn pct(after: u64, before: u64) -> f64 {
    if before == 0 {
        0.0
    } else {
        round2(100.0 * (after as f64 - before as f64) / before as f64)
    }
}

impl ReportRow {
    pub fn for_model(model: &ModelFile) -> Self {
        let layers = model.layers().filter(|l| l.role == Role::Main).count();
        let params: u64 = model.layers().map(|l| layer_params(&l.spec)).sum();
        let flops: u64 = model.layers().map(|l| layer_flops(&l.spec)).sum();
        Self {
            model: model.name.clone(),
            variant: "original".into(),
            layers,
            params_m: round2(params as f64 / 1e6),
            flops_b: round2(flops as f64 / 1e9),
            delta_params_pct: 0.0,
            delta_flops_pct: 0.0,
        }
    }

    pub fn for_plan(plan: &CompressionPlan) -> Self {
        let t = &plan.totals;
        Self {
            model: plan.model.clone(),
            variant: plan.transform.clone(),
            layers: t.layer_count_after,
            params_m: round2(t.params_after as f64 / 1e6),
            flops_b: round2(t.flops_after as f64 / 1e9),
            delta_params_pct: pct(t.params_after, t.params_before),
            delta_flops_pct: pct(t.flops_after, t.flops_before),
        }
    }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Right-aligned plain-text table.
    pub fn to_table(&self) -> String {
        let header = [
            "model",
            "variant",
            "layers",
            "params(M)",
            "flops(B)",
            "dparams%",
            "dflops%",
        ];
        let cells: Vec<[String; 7]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.model.clone(),
                    r.variant.clone(),
                    r.layers.to_string(),
                    format!("{:.2}", r.params_m),
                    format!("{:.2}", r.flops_b),
                    format!("{:.2}", r.delta_params_pct),
                    format!("{:.2}", r.delta_flops_pct),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.len());
            }
        }
        let line = |items: Vec<&str>| {
            items
                .iter()
                .zip(widths)
                .enumerate()
                .map(|(i, (s, w))| {
                    if i < 2 {
                        format!("{s:<w$}")
                    } else {
                        format!("{s:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(header.to_vec()) + "\n";
        for row in &cells {
            out += &line(row.iter().map(String::as_str).collect());
            out.push('\n');
        }
        out
    }
}
