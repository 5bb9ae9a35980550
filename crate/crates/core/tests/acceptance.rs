//! Acceptance suite: one PASS/FAIL line per check, exit status 1 if any
//! check fails. Published values are the reference ResNet figures; derived
//! values come from oracles written independently of the library code.

use std::path::PathBuf;
use std::time::Instant;

use lrd::decompose::{decompose_svd, decompose_tucker2, relative_error, TuckerFactors};
use lrd::model::ModelFile;
use lrd::nn::{conv2d, run_branch_sum, run_stack, FeatureMap};
use lrd::planner::{
    optimize_rank, plan_model, svd_rank_for_ratio, tucker_ranks_for_ratio, CompressionPlan,
    LayerSpec, NnProfiler, PlanError, Policy, RankChoice, RankRule, TimingProvider,
};
use lrd::report::ReportRow;
use lrd::tensor::{Dense, Matrix, Tensor4};
use lrd::transforms::{
    block_diagonal_core, branch_tucker, branched_to_grouped, freeze_and_refit, merge_1x1,
    merge_plan, MergeOptions,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// Pinned tolerances.
const RANK_FC_TOL: i64 = 1;
const PARAMS_REL_TOL: f64 = 0.005;
const FLOPS_REL_TOL: f64 = 0.02;
const VANILLA_DPARAMS_TOL: f64 = 1.0;
const VANILLA_DFLOPS_TOL: f64 = 1.5;
const MERGE_DPARAMS_TOL: f64 = 1.5;
const EY_TOL: f64 = 1e-8;
/// Floor on the Eckart–Young denominator, as a fraction of `‖A‖²`, so that
/// a full-rank truncation (zero tail) is judged against rounding error.
const EY_FLOOR: f64 = 1e-12;
const FULL_RANK_TOL: f64 = 1e-10;
const BRANCH_SUM_TOL: f64 = 1e-12;
const BRANCH_FORWARD_TOL: f64 = 1e-6;
const MERGE_TOL: f64 = 1e-8;
const FREEZE_TOL: f64 = 1e-10;

struct Suite {
    passed: usize,
    failed: usize,
}

impl Suite {
    fn check(&mut self, id: &str, ok: bool, detail: String) {
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
        println!("{} {id}: {detail}", if ok { "PASS" } else { "FAIL" });
    }

    fn note(&self, id: &str, detail: &str) {
        println!("N/A  {id}: {detail}");
    }
}

fn fixture(depth: usize) -> ModelFile {
    let path =
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("fixtures/resnet{depth}.json"));
    ModelFile::load(&path).expect("fixture loads")
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
}

fn gaussian_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.sample(StandardNormal)).unwrap()
}

/// Orthonormal `n × r` columns from Gram–Schmidt on a Gaussian matrix.
fn orthonormal(rng: &mut ChaCha8Rng, n: usize, r: usize) -> Matrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < r {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for u in &cols {
            let d: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Matrix::from_fn(n, r, |i, j| cols[j][i]).unwrap()
}

/// `Σ_{a,b} core[a,b,i,j] · first[c,a] · last[b,s]` by explicit loops.
fn tucker_sum(first: &Matrix, core: &Tensor4, last: &Matrix) -> Tensor4 {
    let [r1, r2, kh, kw] = core.dims();
    Tensor4::from_fn([first.rows(), last.cols(), kh, kw], |[c, s, i, j]| {
        let mut acc = 0.0;
        for a in 0..r1 {
            for b in 0..r2 {
                acc += core.get(a, b, i, j) * first.get(c, a) * last.get(b, s);
            }
        }
        acc
    })
    .unwrap()
}

fn criterion_1(suite: &mut Suite) {
    // (layer, C, S, k, published rank)
    let rows = [
        ("layer1.0.conv1", 64, 64, 1, 16),
        ("layer1.0.conv2", 64, 64, 3, 38),
        ("layer1.0.conv3", 64, 256, 1, 25),
        ("layer4.2.conv1", 2048, 512, 1, 204),
        ("layer4.2.conv2", 512, 512, 3, 309),
        ("layer4.2.conv3", 512, 2048, 1, 204),
    ];
    let plan = plan_model(&fixture(152), 2.0, &Policy::default()).unwrap();
    for (name, c, s, k, published) in rows {
        let rank = if k == 1 {
            svd_rank_for_ratio(c, s, 2.0).unwrap()
        } else {
            tucker_ranks_for_ratio(c, s, k, 2.0, 1.0).unwrap().0
        };
        let planned = plan.entry(name).and_then(|e| e.decision.factorization());
        let planned_rank = planned.map(|f| match f {
            lrd::planner::Factorization::Svd { rank } => rank,
            lrd::planner::Factorization::Tucker { r1, .. } => r1,
        });
        suite.check(
            &format!("C1 rank {name}"),
            rank == published && planned_rank == Some(published),
            format!("formula {rank}, resnet152 plan {planned_rank:?}, published {published}"),
        );
    }
    let fc = svd_rank_for_ratio(2048, 1001, 2.0).unwrap();
    // Oracle: largest r with r·(C + S) ≤ C·S/2, by scanning.
    let oracle = (1..=1001)
        .filter(|r| 2 * r * (2048 + 1001) <= 2048 * 1001)
        .max()
        .unwrap();
    suite.check(
        "C1 rank fc",
        (fc as i64 - 335).abs() <= RANK_FC_TOL && fc == oracle,
        format!("formula {fc}, scan oracle {oracle}, published 335 (±{RANK_FC_TOL})"),
    );
}

fn criterion_2(suite: &mut Suite) {
    let published = [
        (50, 50, 25.56, 8.23),
        (101, 101, 44.55, 15.68),
        (152, 152, 60.19, 23.14),
    ];
    let start = Instant::now();
    for (depth, layers, params, flops) in published {
        let model = fixture(depth);
        let p: u64 = model
            .layers()
            .map(|l| lrd::planner::layer_params(&l.spec))
            .sum();
        let f: u64 = model
            .layers()
            .map(|l| lrd::planner::layer_flops(&l.spec))
            .sum();
        let row = ReportRow::for_model(&model);
        let (pm, fb) = (p as f64 / 1e6, f as f64 / 1e9);
        let dp = (pm - params).abs() / params;
        let df = (fb - flops).abs() / flops;
        suite.check(
            &format!("C2 resnet{depth} accounting"),
            row.layers == layers && dp <= PARAMS_REL_TOL && df <= FLOPS_REL_TOL,
            format!(
                "layers {} (published {layers}), params {pm:.3}M vs {params} ({:.2}% off, tol {}%), flops {fb:.3}B vs {flops} ({:.2}% off, tol {}%)",
                row.layers,
                100.0 * dp,
                100.0 * PARAMS_REL_TOL,
                100.0 * df,
                100.0 * FLOPS_REL_TOL
            ),
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    suite.check(
        "C2 runtime",
        elapsed < 1.0,
        format!("{elapsed:.3}s for three models (limit 1s)"),
    );
}

fn merge_variant(model: &ModelFile) -> CompressionPlan {
    let policy = Policy {
        rank_rule: RankRule::ChannelFraction,
        ..Policy::default()
    };
    let plan = plan_model(model, 2.0, &policy).unwrap();
    merge_plan(model, &plan, MergeOptions::layer_merging()).unwrap()
}

fn criterion_3(suite: &mut Suite) {
    let vanilla = [(50, 115, -43.26), (101, 233, -46.53), (152, 352, -47.69)];
    for (depth, layers, dflops) in vanilla {
        let row =
            ReportRow::for_plan(&plan_model(&fixture(depth), 2.0, &Policy::default()).unwrap());
        suite.check(
            &format!("C3 resnet{depth} vanilla layers"),
            row.layers == layers,
            format!("{} layers, published {layers}", row.layers),
        );
        suite.check(
            &format!("C3 resnet{depth} vanilla deltas"),
            (row.delta_params_pct + 50.0).abs() <= VANILLA_DPARAMS_TOL
                && (row.delta_flops_pct - dflops).abs() <= VANILLA_DFLOPS_TOL,
            format!(
                "dparams {:.2}% vs -50.00 (±{VANILLA_DPARAMS_TOL}), dflops {:.2}% vs {dflops:.2} (±{VANILLA_DFLOPS_TOL})",
                row.delta_params_pct, row.delta_flops_pct
            ),
        );
    }
    let merged = [(50, 50, -51.49), (101, 101, -56.40), (152, 152, -58.11)];
    for (depth, layers, dparams) in merged {
        let row = ReportRow::for_plan(&merge_variant(&fixture(depth)));
        suite.check(
            &format!("C3 resnet{depth} merge"),
            row.layers == layers && (row.delta_params_pct - dparams).abs() <= MERGE_DPARAMS_TOL,
            format!(
                "{} layers (published {layers}), dparams {:.2}% vs {dparams:.2} (±{MERGE_DPARAMS_TOL})",
                row.layers, row.delta_params_pct
            ),
        );
    }
}

fn criterion_4(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let (m, n) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let a = gaussian_matrix(&mut rng, m, n);
        let r = rng.random_range(1..=m.min(n));
        let approx = decompose_svd(&a, r).unwrap().reconstruct();
        let err2 = a.sub(&approx).unwrap().frobenius_norm().powi(2);
        let na = nalgebra::DMatrix::from_row_slice(m, n, a.data());
        let mut sigma: Vec<f64> = na.singular_values().iter().copied().collect();
        sigma.sort_by(|x, y| y.total_cmp(x));
        let tail: f64 = sigma[r..].iter().map(|s| s * s).sum();
        let denom = tail.max(EY_FLOOR * a.frobenius_norm().powi(2));
        worst = worst.max((err2 - tail).abs() / denom);
    }
    suite.check(
        "C4 Eckart-Young (200 matrices)",
        worst <= EY_TOL,
        format!("max |err² - Σtail σ²| / tail = {worst:.2e} (tol {EY_TOL:e}; σ from nalgebra)"),
    );

    let mut worst_svd: f64 = 0.0;
    let mut worst_tucker: f64 = 0.0;
    for _ in 0..50 {
        let (m, n) = (rng.random_range(1..=64), rng.random_range(1..=64));
        let a = gaussian_matrix(&mut rng, m, n);
        let full = decompose_svd(&a, m.min(n)).unwrap().reconstruct();
        worst_svd = worst_svd.max(relative_error(&a, &full).unwrap());
        let dims = [rng.random_range(1..=12), rng.random_range(1..=12), 3, 3];
        let w = gaussian_tensor(&mut rng, dims);
        let f = decompose_tucker2(&w, dims[0], dims[1]).unwrap();
        worst_tucker = worst_tucker.max(relative_error(&w, &f.reconstruct()).unwrap());
    }
    suite.check(
        "C4 full-rank reconstruction",
        worst_svd <= FULL_RANK_TOL && worst_tucker <= FULL_RANK_TOL,
        format!("svd {worst_svd:.2e}, tucker {worst_tucker:.2e} (tol {FULL_RANK_TOL:e})"),
    );
}

fn random_factors(rng: &mut ChaCha8Rng) -> TuckerFactors {
    let base = [2, 4, 6, 8, 12];
    let r1 = base[rng.random_range(0..base.len())];
    let r2 = base[rng.random_range(0..base.len())];
    let (c, s, k) = (
        r1 + rng.random_range(0..6),
        r2 + rng.random_range(0..6),
        [1, 3][rng.random_range(0..2)],
    );
    TuckerFactors {
        first: gaussian_matrix(rng, c, r1),
        core: gaussian_tensor(rng, [r1, r2, k, k]),
        last: gaussian_matrix(rng, r2, s),
    }
}

fn divisors(r1: usize, r2: usize) -> Vec<usize> {
    (1..=r1.min(r2))
        .filter(|n| r1.is_multiple_of(*n) && r2.is_multiple_of(*n))
        .collect()
}

fn criterion_5(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut dense_sum, mut dense_fwd, mut diag_sum, mut grouped_vs_branches) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut cases, mut accounting_ok, mut multi) = (0, true, 0);
    for _ in 0..50 {
        let f = random_factors(&mut rng);
        let (r1, r2) = f.ranks();
        let k = f.kernel();
        let vanilla = tucker_sum(&f.first, &f.core, &f.last);
        for n in divisors(r1, r2) {
            cases += 1;
            multi += usize::from(n > 1);
            let b = branch_tucker(&f, n).unwrap();
            dense_sum = dense_sum.max(relative_error(&vanilla, &b.reconstruct_sum()).unwrap());

            let g = branched_to_grouped(&b).unwrap();
            accounting_ok &= g.core_param_count() * n == r1 * r2 * k * k;
            let x = FeatureMap::random([1, f.first.rows(), 6, 6], &mut rng);
            let pad = k / 2;
            let grouped = run_stack(&g.to_stack(1, pad, None), &x).unwrap();
            let reference = conv2d(&x, &vanilla, 1, pad, 1).unwrap();
            dense_fwd = dense_fwd.max(grouped.relative_diff(&reference));
            let branches = run_branch_sum(&b.branch_stacks(1, pad, None), &x).unwrap();
            grouped_vs_branches = grouped_vs_branches.max(grouped.relative_diff(&branches));

            let bd = block_diagonal_core(&f, n).unwrap();
            let bd_vanilla = tucker_sum(&bd.first, &bd.core, &bd.last);
            let bd_sum = branch_tucker(&bd, n).unwrap().reconstruct_sum();
            diag_sum = diag_sum.max(relative_error(&bd_vanilla, &bd_sum).unwrap());
        }
    }
    suite.check(
        "C5 branch sum == vanilla (dense cores)",
        dense_sum <= BRANCH_SUM_TOL,
        format!("{cases} (factor set, N) cases, {multi} with N > 1: max relative gap {dense_sum:.2e} (tol {BRANCH_SUM_TOL:e})"),
    );
    suite.check(
        "C5 grouped forward == vanilla forward (dense cores)",
        dense_fwd <= BRANCH_FORWARD_TOL,
        format!("max relative gap {dense_fwd:.2e} (tol {BRANCH_FORWARD_TOL:e})"),
    );
    suite.check(
        "C5 branch sum == vanilla (block-diagonal cores)",
        diag_sum <= BRANCH_SUM_TOL,
        format!("max relative gap {diag_sum:.2e} (tol {BRANCH_SUM_TOL:e})"),
    );
    suite.check(
        "C5 grouped forward == branch-sum forward",
        grouped_vs_branches <= BRANCH_FORWARD_TOL,
        format!("max relative gap {grouped_vs_branches:.2e} (tol {BRANCH_FORWARD_TOL:e})"),
    );
    suite.check(
        "C5 grouped core params == r1·r2·k²/N",
        accounting_ok,
        format!("exact equality over {cases} cases"),
    );
}

fn criterion_6(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (c, m, s) = (
            rng.random_range(1..=16),
            rng.random_range(1..=16),
            rng.random_range(1..=16),
        );
        let wa = gaussian_matrix(&mut rng, c, m);
        let wb = gaussian_matrix(&mut rng, m, s);
        let stride = rng.random_range(1..=2);
        let x = FeatureMap::random([2, c, 5, 5], &mut rng);
        let seq = conv2d(
            &conv2d(&x, &Tensor4::from_matrix(&wa), stride, 0, 1).unwrap(),
            &Tensor4::from_matrix(&wb),
            1,
            0,
            1,
        )
        .unwrap();
        let merged = conv2d(
            &x,
            &Tensor4::from_matrix(&merge_1x1(&wa, &wb).unwrap()),
            stride,
            0,
            1,
        )
        .unwrap();
        worst = worst.max(merged.relative_diff(&seq));
    }
    suite.check(
        "C6 merged 1x1 == sequential pair (100 cases)",
        worst <= MERGE_TOL,
        format!("max relative gap {worst:.2e} (tol {MERGE_TOL:e})"),
    );
    for depth in [50, 101, 152] {
        let row = ReportRow::for_plan(&merge_variant(&fixture(depth)));
        suite.check(
            &format!("C6 resnet{depth} merge keeps layer count"),
            row.layers == depth,
            format!("{} layers after merging, {depth} before", row.layers),
        );
    }
}

fn criterion_7(suite: &mut Suite) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut closed_form, mut not_better, mut exact) = (0.0f64, 0usize, 0.0f64);
    for _ in 0..100 {
        let (c, s, k) = (
            rng.random_range(2..=10),
            rng.random_range(2..=10),
            [1, 3][rng.random_range(0..2)],
        );
        let (r1, r2) = (rng.random_range(1..=c), rng.random_range(1..=s));
        let w = gaussian_tensor(&mut rng, [c, s, k, k]);
        let f = decompose_tucker2(&w, r1, r2).unwrap();
        let noise = gaussian_tensor(&mut rng, [c, s, k, k]);
        let perturbed = w.add(&noise.scale(0.1)).unwrap();

        let refit = freeze_and_refit(&perturbed, &f).unwrap();
        // Closed form: core[a,b,i,j] = Σ_c Σ_s first[c,a] · W[c,s,i,j] · last[b,s].
        let oracle = Tensor4::from_fn([r1, r2, k, k], |[a, b, i, j]| {
            let mut acc = 0.0;
            for ci in 0..c {
                for si in 0..s {
                    acc += f.first.get(ci, a) * perturbed.get(ci, si, i, j) * f.last.get(b, si);
                }
            }
            acc
        })
        .unwrap();
        closed_form = closed_form.max(relative_error(&oracle, &refit.core).unwrap());
        let before = relative_error(&perturbed, &f.reconstruct()).unwrap();
        let after = relative_error(&perturbed, &refit.reconstruct()).unwrap();
        not_better += usize::from(after > before + 1e-15);

        let first = orthonormal(&mut rng, c, r1);
        let last = orthonormal(&mut rng, s, r2).transpose();
        let core = gaussian_tensor(&mut rng, [r1, r2, k, k]);
        let target = tucker_sum(&first, &core, &last);
        let guess = TuckerFactors {
            first,
            core: gaussian_tensor(&mut rng, [r1, r2, k, k]),
            last,
        };
        let refit = freeze_and_refit(&target, &guess).unwrap();
        exact = exact.max(relative_error(&target, &refit.reconstruct()).unwrap());
    }
    suite.check(
        "C7 refit core == orthonormal projection",
        closed_form <= FREEZE_TOL,
        format!("max relative gap {closed_form:.2e} (tol {FREEZE_TOL:e})"),
    );
    suite.check(
        "C7 refit error <= pre-refit error (100 cases)",
        not_better == 0,
        format!("{not_better} cases got worse"),
    );
    suite.check(
        "C7 representable tensors refit exactly",
        exact <= FREEZE_TOL,
        format!("max relative error {exact:.2e} (tol {FREEZE_TOL:e})"),
    );
}

/// Table-driven cost curve.
struct Curve {
    original: f64,
    times: Vec<f64>,
    r_min: usize,
}

impl TimingProvider for Curve {
    fn original_time(&mut self, _: &LayerSpec) -> Result<f64, PlanError> {
        Ok(self.original)
    }
    fn decomposed_time(&mut self, _: &LayerSpec, rank: usize) -> Result<f64, PlanError> {
        Ok(self.times[rank - self.r_min])
    }
}

/// Exhaustive oracle: list every candidate with its drop and take the best
/// after sorting by (drop desc, time asc, rank desc).
fn oracle_choice(curve: &Curve, r_init: usize, step: usize) -> RankChoice {
    let scanned: Vec<usize> = (curve.r_min..=r_init).rev().step_by(step).collect();
    let time = |r: usize| curve.times[r - curve.r_min];
    let mut candidates: Vec<(f64, f64, usize)> = scanned
        .iter()
        .enumerate()
        .filter(|&(_, &r)| time(r) < curve.original)
        .map(|(i, &r)| {
            let drop = if i == 0 {
                f64::NEG_INFINITY
            } else {
                time(scanned[i - 1]) - time(r)
            };
            (drop, time(r), r)
        })
        .collect();
    candidates.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.total_cmp(&b.1))
            .then(b.2.cmp(&a.2))
    });
    candidates
        .first()
        .map_or(RankChoice::Passthrough, |c| RankChoice::Rank(c.2))
}

fn criterion_8(suite: &mut Suite) {
    let spec = LayerSpec::conv("synthetic", 512, 512, 3, 1, 1, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut agree, mut passthrough) = (0, 0);
    for case in 0..100 {
        let r_init = rng.random_range(2..=60);
        let r_min = rng.random_range(1..=r_init);
        let step = rng.random_range(1..=3);
        let times: Vec<f64> = (r_min..=r_init)
            .map(|_| (rng.random_range(0..20) as f64) / 2.0)
            .collect();
        // Every fifth curve is slower than the original everywhere.
        let original = if case % 5 == 0 {
            -1.0
        } else {
            rng.random_range(0..20) as f64 / 2.0
        };
        let mut curve = Curve {
            original,
            times,
            r_min,
        };
        let expected = oracle_choice(&curve, r_init, step);
        let got = optimize_rank(&spec, r_init, r_min, step, &mut curve)
            .unwrap()
            .choice;
        agree += usize::from(got == expected);
        passthrough += usize::from(expected == RankChoice::Passthrough);
    }
    suite.check(
        "C8 rank scan == exhaustive oracle (100 curves)",
        agree == 100 && passthrough >= 20,
        format!("{agree}/100 agree, {passthrough} passthrough cases"),
    );

    // A cliff: time falls by a step when the rank crosses a multiple of 32.
    let r_min = 232;
    let cliff = Curve {
        original: 10.0,
        times: (r_min..=309)
            .map(|r| if r > 288 { 9.0 } else { 6.0 } + r as f64 * 1e-3)
            .collect(),
        r_min,
    };
    let mut c = cliff;
    let got = optimize_rank(&spec, 309, r_min, 1, &mut c).unwrap().choice;
    suite.check(
        "C8 synthetic rank cliff",
        got == RankChoice::Rank(288),
        format!("chosen {got:?}, cliff at 288"),
    );

    // layer1.0.conv1 analog: the original 64x64 1x1 layer beats every rank.
    let small = LayerSpec::conv("layer1.0.conv1", 64, 64, 1, 1, 0, 56);
    let mut slow = Curve {
        original: 1.0,
        times: (12..=16).map(|r| 1.2 + r as f64 * 0.01).collect(),
        r_min: 12,
    };
    let got = optimize_rank(&small, 16, 12, 1, &mut slow).unwrap().choice;
    suite.check(
        "C8 layer1.0.conv1 analog keeps original",
        got == RankChoice::Passthrough,
        format!("chosen {got:?}, published ORG"),
    );

    let reps = NnProfiler::new(1, 8, 0);
    suite.check(
        "C8 one repetition rejected",
        matches!(reps, Err(PlanError::TooFewReps { reps: 1, min: 3 })),
        format!("{:?}", reps.err()),
    );
    suite.note("C8 wall-clock speed-ups", "hardware-bound, not reproduced");
}

fn main() {
    let mut suite = Suite {
        passed: 0,
        failed: 0,
    };
    criterion_1(&mut suite);
    criterion_2(&mut suite);
    criterion_3(&mut suite);
    criterion_4(&mut suite);
    criterion_5(&mut suite);
    criterion_6(&mut suite);
    criterion_7(&mut suite);
    criterion_8(&mut suite);
    suite.note(
        "C9 ImageNet accuracy",
        "not reproducible at desk scale; covered by C4-C7",
    );
    println!("\n{} passed, {} failed", suite.passed, suite.failed);
    if suite.failed > 0 {
        std::process::exit(1);
    }
}
