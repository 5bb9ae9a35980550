use lrd::decompose::{decompose_svd, decompose_tucker2, relative_error};
use lrd::fixtures;
use lrd::planner::{
    optimize_rank, plan_model, quantize_rank, svd_rank_for_ratio, tucker_params,
    tucker_ranks_for_ratio, CompressionPlan, LayerSpec, PlanError, Policy, RankChoice,
    TimingProvider,
};
use lrd::tensor::{fold, io, svd, unfold, Dense, Matrix, Mode, Tensor4};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |d| Matrix::new(r, c, d).unwrap())
    })
}

fn tensor(max_c: usize, max_k: usize) -> impl Strategy<Value = Tensor4> {
    (1..=max_c, 1..=max_c, 1..=max_k).prop_flat_map(|(c, s, k)| {
        prop::collection::vec(-5.0f64..5.0, c * s * k * k)
            .prop_map(move |d| Tensor4::new([c, s, k, k], d).unwrap())
    })
}

struct Table {
    original: f64,
    times: Vec<f64>,
    r_min: usize,
}

impl TimingProvider for Table {
    fn original_time(&mut self, _: &LayerSpec) -> Result<f64, PlanError> {
        Ok(self.original)
    }
    fn decomposed_time(&mut self, _: &LayerSpec, rank: usize) -> Result<f64, PlanError> {
        Ok(self.times[rank - self.r_min])
    }
}

/// Brute force over every scanned rank: best (drop, −time, rank).
fn brute_force(t: &Table, r_init: usize, step: usize) -> RankChoice {
    let scanned: Vec<usize> = (t.r_min..=r_init).rev().step_by(step).collect();
    let time = |r: usize| t.times[r - t.r_min];
    let mut best: Option<(f64, f64, usize)> = None;
    for (i, &r) in scanned.iter().enumerate() {
        if time(r) >= t.original {
            continue;
        }
        let drop = if i == 0 {
            f64::NEG_INFINITY
        } else {
            time(scanned[i - 1]) - time(r)
        };
        let key = (drop, -time(r), r);
        if best.is_none_or(|b| key.partial_cmp(&b) == Some(std::cmp::Ordering::Greater)) {
            best = Some(key);
        }
    }
    best.map_or(RankChoice::Passthrough, |b| RankChoice::Rank(b.2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fold_inverts_unfold(t in tensor(6, 3)) {
        for mode in [Mode::C, Mode::S] {
            prop_assert_eq!(&fold(&unfold(&t, mode), mode, t.dims()).unwrap(), &t);
        }
    }

    #[test]
    fn tensor_bytes_round_trip(t in tensor(5, 3)) {
        prop_assert_eq!(io::from_bytes(&io::to_bytes(&t)).unwrap(), t.clone());
        prop_assert_eq!(io::from_json(&io::to_json(&t)).unwrap(), t);
    }

    #[test]
    fn svd_rank_is_largest_within_budget(c in 1usize..600, s in 1usize..600, alpha in 1.01f64..8.0) {
        let budget = (c * s) as f64 / alpha;
        match svd_rank_for_ratio(c, s, alpha) {
            Ok(r) => {
                prop_assert!((r * (c + s)) as f64 <= budget);
                prop_assert!(((r + 1) * (c + s)) as f64 > budget);
            }
            Err(_) => prop_assert!(((c + s) as f64) > budget),
        }
    }

    #[test]
    fn tucker_ranks_are_largest_within_budget(
        c in 1usize..300, s in 1usize..300, k in 1usize..6, alpha in 1.01f64..8.0, beta in 0.5f64..2.0,
    ) {
        let budget = (c * s * k * k) as f64 / alpha;
        let r2_of = |r1: usize| (beta * r1 as f64).round() as usize;
        if let Ok((r1, r2)) = tucker_ranks_for_ratio(c, s, k, alpha, beta) {
            prop_assert_eq!(r2, r2_of(r1));
            prop_assert!(tucker_params(c, s, k, r1, r2) as f64 <= budget);
            prop_assert!(tucker_params(c, s, k, r1 + 1, r2_of(r1 + 1)) as f64 > budget);
        }
    }

    #[test]
    fn quantized_rank_is_a_fitting_multiple(rank in 1usize..500, n in 1usize..9, max in 1usize..500) {
        match quantize_rank(rank, n, max) {
            Some(q) => {
                prop_assert_eq!(q % n, 0);
                prop_assert!(q <= max.max(rank));
                prop_assert!(q.abs_diff(rank) < n || q < rank);
            }
            None => prop_assert!(rank.min(max) < n),
        }
    }

    #[test]
    fn algorithm_one_matches_brute_force(
        r_init in 1usize..40,
        frac in 0.0f64..1.0,
        step in 1usize..4,
        raw in prop::collection::vec(0u8..12, 40),
        original in 0u8..14,
    ) {
        let r_min = 1 + ((r_init - 1) as f64 * frac) as usize;
        let times: Vec<f64> = raw[..=r_init - r_min].iter().map(|&t| f64::from(t)).collect();
        let mut table = Table { original: f64::from(original), times, r_min };
        let spec = LayerSpec::conv("x", 8, 8, 3, 1, 1, 4);
        let expected = brute_force(&table, r_init, step);
        prop_assert_eq!(optimize_rank(&spec, r_init, r_min, step, &mut table).unwrap().choice, expected);
    }

    #[test]
    fn singular_values_match_nalgebra(m in matrix(24)) {
        let ours = svd(&m).unwrap();
        let na = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.data());
        let mut theirs: Vec<f64> = na.singular_values().iter().copied().collect();
        theirs.sort_by(|a, b| b.total_cmp(a));
        let scale = ours.sigma[0].max(1.0);
        for (a, b) in ours.sigma.iter().zip(&theirs) {
            prop_assert!((a - b).abs() <= 1e-10 * scale, "{} vs {}", a, b);
        }
        prop_assert!(ours.u.orthonormality_defect() < 1e-10);
        prop_assert!(ours.v.orthonormality_defect() < 1e-10);
        prop_assert!(relative_error(&m, &ours.reconstruct()).unwrap() < 1e-10 || m.frobenius_norm() == 0.0);
    }

    #[test]
    fn truncation_error_is_tail_energy(m in matrix(20), pick in 0.0f64..1.0) {
        let full = svd(&m).unwrap();
        let r = 1 + (pick * (full.rank() - 1) as f64) as usize;
        let approx = decompose_svd(&m, r).unwrap().reconstruct();
        let err2 = m.sub(&approx).unwrap().frobenius_norm().powi(2);
        let tail: f64 = full.sigma[r..].iter().map(|s| s * s).sum();
        prop_assert!((err2 - tail).abs() <= 1e-9 * m.frobenius_norm().powi(2).max(1e-300));
    }

    #[test]
    fn svd_error_shrinks_with_rank(m in matrix(16)) {
        let n = m.rows().min(m.cols());
        let errs: Vec<f64> = (1..=n)
            .map(|r| relative_error(&m, &decompose_svd(&m, r).unwrap().reconstruct()).unwrap())
            .collect();
        for w in errs.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn tucker_error_shrinks_with_rank(t in tensor(8, 3)) {
        let [c, s, _, _] = t.dims();
        let mut last = f64::INFINITY;
        for r in 1..=c.min(s) {
            let e = relative_error(&t, &decompose_tucker2(&t, r, r).unwrap().reconstruct()).unwrap();
            prop_assert!(e <= last + 1e-12);
            last = e;
        }
        let full = decompose_tucker2(&t, c, s).unwrap();
        prop_assert!(relative_error(&t, &full.reconstruct()).unwrap() < 1e-10 || t.frobenius_norm() == 0.0);
    }

    #[test]
    fn plans_are_deterministic_and_round_trip(alpha in 1.0001f64..6.0, beta in 0.5f64..2.0) {
        let model = fixtures::resnet(50).unwrap();
        let policy = Policy { beta, ..Policy::default() };
        let a = plan_model(&model, alpha, &policy).unwrap();
        let b = plan_model(&model, alpha, &policy).unwrap();
        prop_assert_eq!(a.to_json(), b.to_json());
        prop_assert_eq!(CompressionPlan::from_json(&a.to_json()).unwrap(), a.clone());
        prop_assert!(a.totals.params_after <= a.totals.params_before);
    }
}
