//! Profile-driven rank search.
//!
//! [`optimize_rank`] scans ranks downwards from `r_init`, measuring each
//! candidate through a [`TimingProvider`]. Among ranks whose decomposed
//! time beats the original layer it picks the one right after the largest
//! drop in time, where the drop at `r` is `t(previous scanned rank) − t(r)`.
//! Ties go to the smaller time, then the larger rank. The first scanned
//! rank has no predecessor and gets a drop of `−∞`.

use std::collections::HashMap;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LayerKind, LayerSpec, PlanError};
use crate::decompose::{hosvd_bases, tucker_from_bases, DecomposedLayer, SvdFactors};
use crate::nn::{run_stack, FeatureMap, StackLayer};
use crate::tensor::{svd, Matrix, SvdResult, Tensor4};
use crate::weights::seeded_weight;

/// Smallest accepted number of timed repetitions.
pub const MIN_REPS: usize = 3;

/// Timing statistics for one layer at one rank (`rank == None` is the
/// original layer). Times are seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub layer: String,
    pub rank: Option<usize>,
    pub median: f64,
    pub mad: f64,
    pub reps: usize,
}

/// Source of layer costs for [`optimize_rank`].
pub trait TimingProvider {
    fn original_time(&mut self, spec: &LayerSpec) -> Result<f64, PlanError>;
    fn decomposed_time(&mut self, spec: &LayerSpec, rank: usize) -> Result<f64, PlanError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "choice", content = "rank", rename_all = "snake_case")]
pub enum RankChoice {
    Rank(usize),
    Passthrough,
}

/// Outcome of one rank scan, including every measured time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSearch {
    pub r_init: usize,
    pub r_min: usize,
    pub step: usize,
    pub original_time: f64,
    /// `(rank, time)` in scan order (descending rank).
    pub times: Vec<(usize, f64)>,
    pub choice: RankChoice,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub records: Vec<ProfileRecord>,
}

pub fn optimize_rank(
    spec: &LayerSpec,
    r_init: usize,
    r_min: usize,
    step: usize,
    provider: &mut dyn TimingProvider,
) -> Result<RankSearch, PlanError> {
    if r_min > r_init || r_min == 0 {
        return Err(PlanError::RankWindow { r_min, r_init });
    }
    let step = step.max(1);
    let original_time = provider.original_time(spec)?;
    let mut times = Vec::new();
    let mut r = r_init;
    loop {
        times.push((r, provider.decomposed_time(spec, r)?));
        if r < r_min + step {
            break;
        }
        r -= step;
    }

    let mut best: Option<(f64, f64, usize)> = None;
    for (i, &(rank, t)) in times.iter().enumerate() {
        if t >= original_time {
            continue;
        }
        let drop = if i == 0 {
            f64::NEG_INFINITY
        } else {
            times[i - 1].1 - t
        };
        let better = match best {
            None => true,
            Some((bd, bt, br)) => drop > bd || (drop == bd && (t < bt || (t == bt && rank > br))),
        };
        if better {
            best = Some((drop, t, rank));
        }
    }
    Ok(RankSearch {
        r_init,
        r_min,
        step,
        original_time,
        times,
        choice: best.map_or(RankChoice::Passthrough, |(_, _, r)| RankChoice::Rank(r)),
        records: Vec::new(),
    })
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Runs `stack` on `x` for `warmup` untimed and `reps` timed passes.
///
/// Returns the timing record and the output of the last pass.
pub fn profile_layer(
    layer: &str,
    rank: Option<usize>,
    stack: &[StackLayer],
    x: &FeatureMap,
    reps: usize,
    warmup: usize,
) -> Result<(ProfileRecord, FeatureMap), PlanError> {
    if reps < MIN_REPS {
        return Err(PlanError::TooFewReps {
            reps,
            min: MIN_REPS,
        });
    }
    let fail = |e: crate::nn::NnError| PlanError::Timing {
        layer: layer.to_string(),
        reason: e.to_string(),
    };
    let mut out = run_stack(stack, x).map_err(fail)?;
    for _ in 1..warmup.max(1) {
        out = run_stack(stack, x).map_err(fail)?;
    }
    let mut samples = Vec::with_capacity(reps);
    for _ in 0..reps {
        let start = Instant::now();
        out = run_stack(stack, x).map_err(fail)?;
        samples.push(start.elapsed().as_secs_f64().max(1e-9));
    }
    samples.sort_by(f64::total_cmp);
    let med = median(&samples);
    let mut dev: Vec<f64> = samples.iter().map(|s| (s - med).abs()).collect();
    dev.sort_by(f64::total_cmp);
    Ok((
        ProfileRecord {
            layer: layer.to_string(),
            rank,
            median: med,
            mad: median(&dev),
            reps,
        },
        out,
    ))
}

enum Basis {
    Svd(SvdResult),
    Tucker { first: Matrix, last: Matrix },
}

/// Wall-clock provider backed by the reference forward engine.
///
/// Weights come from the seeded generator. Each layer is decomposed once
/// at the largest rank requested; smaller ranks slice the nested bases.
/// Inputs are capped at `max_hw` pixels per side to bound run time.
pub struct NnProfiler {
    pub reps: usize,
    pub warmup: usize,
    pub max_hw: usize,
    pub seed: u64,
    pub records: Vec<ProfileRecord>,
    cache: HashMap<String, (Tensor4, FeatureMap, Basis)>,
}

impl NnProfiler {
    pub fn new(reps: usize, max_hw: usize, seed: u64) -> Result<Self, PlanError> {
        if reps < MIN_REPS {
            return Err(PlanError::TooFewReps {
                reps,
                min: MIN_REPS,
            });
        }
        Ok(Self {
            reps,
            warmup: 1,
            max_hw: max_hw.max(1),
            seed,
            records: Vec::new(),
            cache: HashMap::new(),
        })
    }

    fn input(&self, spec: &LayerSpec) -> FeatureMap {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let dims = match spec.kind {
            LayerKind::Linear => [1, spec.in_channels, 1, 1],
            LayerKind::Conv => {
                let min = spec.kernel.saturating_sub(2 * spec.padding).max(1);
                let h = spec.input_hw[0].min(self.max_hw).max(min);
                let w = spec.input_hw[1].min(self.max_hw).max(min);
                [1, spec.in_channels, h, w]
            }
        };
        FeatureMap::random(dims, &mut rng)
    }

    fn prepare(&mut self, spec: &LayerSpec, rank: usize) -> Result<(), PlanError> {
        if self.cache.contains_key(&spec.name) {
            return Ok(());
        }
        let fail = |reason: String| PlanError::Timing {
            layer: spec.name.clone(),
            reason,
        };
        let weight = seeded_weight(spec, self.seed);
        let basis = if spec.kernel == 1 {
            let m = weight.to_matrix().map_err(|e| fail(e.to_string()))?;
            Basis::Svd(svd(&m).map_err(|e| fail(e.to_string()))?)
        } else {
            let r1 = rank.min(spec.in_channels);
            let r2 = rank.min(spec.out_channels);
            let (u, v) = hosvd_bases(&weight, r1, r2).map_err(|e| fail(e.to_string()))?;
            Basis::Tucker {
                first: u,
                last: v.transpose(),
            }
        };
        let x = self.input(spec);
        self.cache.insert(spec.name.clone(), (weight, x, basis));
        Ok(())
    }

    fn original_stack(spec: &LayerSpec, weight: &Tensor4) -> Vec<StackLayer> {
        DecomposedLayer::passthrough(spec.clone(), weight.clone(), None).to_stack()
    }

    fn ranked_stack(
        spec: &LayerSpec,
        weight: &Tensor4,
        basis: &Basis,
        rank: usize,
    ) -> Result<Vec<StackLayer>, String> {
        let layer = match basis {
            Basis::Svd(full) => {
                let t = full.truncate(rank).map_err(|e| e.to_string())?;
                let root: Vec<f64> = t.sigma.iter().map(|s| s.sqrt()).collect();
                let f = SvdFactors {
                    w0: t.u.scale_columns(&root).map_err(|e| e.to_string())?,
                    w1: t
                        .v
                        .scale_columns(&root)
                        .map_err(|e| e.to_string())?
                        .transpose(),
                };
                DecomposedLayer::svd(spec.clone(), f, None)
            }
            Basis::Tucker { first, last } => {
                let r1 = rank.min(first.cols());
                let r2 = rank.min(last.rows());
                let f = tucker_from_bases(
                    weight,
                    first.columns(0..r1).map_err(|e| e.to_string())?,
                    last.row_block(0..r2).map_err(|e| e.to_string())?,
                )
                .map_err(|e| e.to_string())?;
                DecomposedLayer::tucker(spec.clone(), f, None)
            }
        };
        Ok(layer.to_stack())
    }

    fn measure(&mut self, spec: &LayerSpec, rank: Option<usize>) -> Result<f64, PlanError> {
        let (weight, x, basis) = &self.cache[&spec.name];
        let stack = match rank {
            None => Self::original_stack(spec, weight),
            Some(r) => {
                Self::ranked_stack(spec, weight, basis, r).map_err(|reason| PlanError::Timing {
                    layer: spec.name.clone(),
                    reason,
                })?
            }
        };
        let (record, _) = profile_layer(&spec.name, rank, &stack, x, self.reps, self.warmup)?;
        let t = record.median;
        self.records.push(record);
        Ok(t)
    }
}

impl TimingProvider for NnProfiler {
    fn original_time(&mut self, spec: &LayerSpec) -> Result<f64, PlanError> {
        // The original layer is measured first, before any basis exists.
        self.cache.remove(&spec.name);
        let weight = seeded_weight(spec, self.seed);
        let x = self.input(spec);
        let (record, _) = profile_layer(
            &spec.name,
            None,
            &Self::original_stack(spec, &weight),
            &x,
            self.reps,
            self.warmup,
        )?;
        let t = record.median;
        self.records.push(record);
        Ok(t)
    }

    fn decomposed_time(&mut self, spec: &LayerSpec, rank: usize) -> Result<f64, PlanError> {
        self.prepare(spec, rank)?;
        self.measure(spec, Some(rank))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Cost curve given as a closure over the rank.
    struct Synthetic<F: Fn(usize) -> f64> {
        original: f64,
        cost: F,
    }

    impl<F: Fn(usize) -> f64> TimingProvider for Synthetic<F> {
        fn original_time(&mut self, _: &LayerSpec) -> Result<f64, PlanError> {
            Ok(self.original)
        }
        fn decomposed_time(&mut self, _: &LayerSpec, rank: usize) -> Result<f64, PlanError> {
            Ok((self.cost)(rank))
        }
    }

    struct Failing;

    impl TimingProvider for Failing {
        fn original_time(&mut self, _: &LayerSpec) -> Result<f64, PlanError> {
            Ok(1.0)
        }
        fn decomposed_time(&mut self, spec: &LayerSpec, _: usize) -> Result<f64, PlanError> {
            Err(PlanError::Timing {
                layer: spec.name.clone(),
                reason: "device busy".into(),
            })
        }
    }

    fn spec() -> LayerSpec {
        LayerSpec::conv("layer4.2.conv2", 512, 512, 3, 1, 1, 7)
    }

    #[test]
    fn step_discontinuity_is_found() {
        let mut p = Synthetic {
            original: 100.0,
            cost: |r: usize| {
                if r >= 257 {
                    50.0 + r as f64 * 0.01
                } else {
                    20.0 + r as f64 * 0.01
                }
            },
        };
        let s = optimize_rank(&spec(), 309, 232, 1, &mut p).unwrap();
        assert_eq!(s.choice, RankChoice::Rank(256));
        assert_eq!(s.times.len(), 309 - 232 + 1);
    }

    #[test]
    fn all_slower_is_passthrough() {
        let mut p = Synthetic {
            original: 1.0,
            cost: |r: usize| 2.0 + r as f64,
        };
        assert_eq!(
            optimize_rank(&spec(), 20, 10, 1, &mut p).unwrap().choice,
            RankChoice::Passthrough
        );
    }

    #[test]
    fn uniform_drop_picks_smallest_rank() {
        let mut p = Synthetic {
            original: 1000.0,
            cost: |r: usize| 3.0 * r as f64,
        };
        assert_eq!(
            optimize_rank(&spec(), 40, 30, 1, &mut p).unwrap().choice,
            RankChoice::Rank(30)
        );
    }

    #[test]
    fn only_first_rank_beats_original() {
        let mut p = Synthetic {
            original: 10.0,
            cost: |r: usize| if r == 16 { 5.0 } else { 20.0 },
        };
        assert_eq!(
            optimize_rank(&spec(), 16, 12, 1, &mut p).unwrap().choice,
            RankChoice::Rank(16)
        );
    }

    #[test]
    fn stride_and_window_checks() {
        let mut p = Synthetic {
            original: 1000.0,
            cost: |r: usize| r as f64,
        };
        let s = optimize_rank(&spec(), 100, 75, 10, &mut p).unwrap();
        let ranks: Vec<usize> = s.times.iter().map(|t| t.0).collect();
        assert_eq!(ranks, vec![100, 90, 80]);
        assert!(matches!(
            optimize_rank(&spec(), 10, 11, 1, &mut p),
            Err(PlanError::RankWindow { .. })
        ));
    }

    #[test]
    fn provider_failure_propagates() {
        let err = optimize_rank(&spec(), 10, 8, 1, &mut Failing).unwrap_err();
        assert!(err.to_string().contains("device busy"));
    }

    #[test]
    fn profile_layer_contract() {
        let spec = LayerSpec::conv("c", 4, 6, 3, 1, 1, 6);
        let w = seeded_weight(&spec, 1);
        let stack = DecomposedLayer::passthrough(spec.clone(), w, None).to_stack();
        let x = FeatureMap::random([1, 4, 6, 6], &mut ChaCha8Rng::seed_from_u64(2));
        let (a, ya) = profile_layer("c", None, &stack, &x, 5, 1).unwrap();
        let (_, yb) = profile_layer("c", None, &stack, &x, 3, 2).unwrap();
        assert_eq!(a.reps, 5);
        assert!(a.median > 0.0 && a.mad >= 0.0);
        assert_eq!(ya, yb);
        assert!(matches!(
            profile_layer("c", None, &stack, &x, 1, 1),
            Err(PlanError::TooFewReps { reps: 1, min: 3 })
        ));
    }

    #[test]
    fn nn_profiler_end_to_end() {
        let spec = LayerSpec::conv("mid", 16, 16, 3, 1, 1, 8);
        let mut p = NnProfiler::new(3, 8, 7).unwrap();
        let s = optimize_rank(&spec, 9, 6, 1, &mut p).unwrap();
        assert_eq!(s.times.len(), 4);
        assert_eq!(p.records.len(), 5);
        assert!(p.records.iter().all(|r| r.reps == 3 && r.median > 0.0));
        assert!(NnProfiler::new(2, 8, 7).is_err());
    }
}
