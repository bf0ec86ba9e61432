mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;
use swap_core::ewr::{iht_project, neighborhood_average, GradientMatrix, WeightVector};
use swap_core::ot::{sinkhorn_plan, uniform_marginal, CostMatrix, SinkhornConfig};
use swap_core::pruner::SparsitySchedule;

fn finite() -> impl Strategy<Value = f64> {
    -10.0f64..10.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinkhorn_plans_are_feasible_and_nonnegative(
        xy in (1usize..16).prop_flat_map(|n| (prop::collection::vec(finite(), n), prop::collection::vec(finite(), n))),
        log_eps in -2.0f64..1.0,
    ) {
        let (x, y) = xy;
        let n = x.len();
        let cost = CostMatrix::build(Array1::from(x).view(), Array1::from(y).view()).unwrap();
        let u = uniform_marginal(n);
        let (plan, stats) = sinkhorn_plan(&cost, u.view(), u.view(), 10f64.powf(log_eps), &SinkhornConfig::default()).unwrap();
        prop_assert!(plan.values().iter().all(|&v| v >= 0.0));
        prop_assert!(plan.marginal_residual() <= 1e-9);
        prop_assert!(stats.residual <= 1e-9);
    }

    #[test]
    fn cost_matrix_is_nonnegative_with_zero_diagonal_on_self(
        x in prop::collection::vec(finite(), 1..20),
    ) {
        let a = Array1::from(x);
        let cost = CostMatrix::build(a.view(), a.view()).unwrap();
        for i in 0..a.len() {
            prop_assert_eq!(cost.values()[[i, i]], 0.0);
        }
        prop_assert!(cost.values().iter().all(|&c| c >= 0.0));
        prop_assert_eq!(cost.values().to_owned(), cost.values().t().to_owned());
    }

    #[test]
    fn iht_keeps_exactly_min_k_nonzeros_of_largest_magnitude(
        w in prop::collection::vec(finite(), 1..40),
        k_frac in 0.0f64..=1.0,
    ) {
        let p = w.len();
        let k = ((p as f64) * k_frac).floor() as usize;
        let wv = WeightVector::from_vec(w.clone()).unwrap();
        let out = iht_project(&wv, k).unwrap();
        let nonzero_in = w.iter().filter(|v| **v != 0.0).count();
        prop_assert_eq!(out.nonzero_count(), k.min(nonzero_in));
        let kept_min = out.as_slice().iter().filter(|v| **v != 0.0).map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        for (i, &v) in out.as_slice().iter().enumerate() {
            if v == 0.0 {
                prop_assert!(w[i].abs() <= kept_min);
            } else {
                prop_assert_eq!(v, w[i]);
            }
        }
        prop_assert_eq!(iht_project(&out, k).unwrap(), out);
    }

    #[test]
    fn neighborhood_average_stays_in_row_hull(
        seed in any::<u64>(),
        n in 1usize..12,
        p in 1usize..5,
    ) {
        let mut r = common::rng(seed);
        let g = common::gradients(&mut r, n, p);
        let plan = common::random_plan(&mut r, n);
        let avg = neighborhood_average(&g, &plan).unwrap();
        for j in 0..p {
            let col = g.values().column(j).to_owned();
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for &v in avg.values().column(j) {
                prop_assert!(v >= lo - 1e-12 && v <= hi + 1e-12);
            }
        }
        let mean_in = g.values().mean_axis(ndarray::Axis(0)).unwrap();
        let mean_out = avg.values().mean_axis(ndarray::Axis(0)).unwrap();
        for (a, b) in mean_in.iter().zip(mean_out.iter()) {
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }

    #[test]
    fn schedules_are_monotone_and_hit_their_endpoints(
        k0 in 0.0f64..0.5,
        span in 0.0f64..0.49,
        stages in 1usize..20,
        p in 1usize..5000,
        linear in any::<bool>(),
    ) {
        let kt = k0 + span;
        let s = if linear {
            SparsitySchedule::linear(k0, kt, stages, p).unwrap()
        } else {
            SparsitySchedule::exponential(k0, kt, stages, p).unwrap()
        };
        let f = s.fractions();
        prop_assert_eq!(f.len(), stages + 1);
        prop_assert!((f[0] - k0).abs() <= 1e-15);
        prop_assert!((f[stages] - kt).abs() <= 1e-12);
        prop_assert!(f.windows(2).all(|w| w[1] >= w[0] - 1e-15));
        prop_assert!(s.counts().windows(2).all(|c| c[1] <= c[0]));
        prop_assert!(s.counts().iter().all(|&c| c <= p));
    }

    #[test]
    fn gradient_matrix_projection_is_a_matrix_vector_product(
        seed in any::<u64>(),
        n in 1usize..10,
        p in 1usize..10,
    ) {
        let mut r = common::rng(seed);
        let m: Array2<f64> = common::normal_matrix(&mut r, n, p);
        let w = common::weights(&mut r, p);
        let g = GradientMatrix::new(m.clone()).unwrap();
        let x = g.project(&w).unwrap();
        for i in 0..n {
            let want: f64 = (0..p).map(|j| m[[i, j]] * w.as_slice()[j]).sum();
            prop_assert!((x[i] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }
}
