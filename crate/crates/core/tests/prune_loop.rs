mod common;

use ndarray::Array1;
use swap_core::ewr::{iht_project, step_size, EwrConfig, GradientMatrix, PlanSolver, WeightVector};
use swap_core::pruner::{
    compare_lr_ewr, swap_prune, swap_prune_traced, DataSpec, GradientSource, PreparedTask, ScheduleKind, ScheduleSpec,
    SparsitySchedule, TaskSpec,
};
use swap_core::Result;

/// Serves pre-drawn gradient matrices, one per stage.
struct Fixed(Vec<GradientMatrix>);

impl GradientSource for Fixed {
    fn num_params(&self) -> usize {
        self.0[0].p()
    }

    fn gradients(&mut self, stage: usize, _reference: &WeightVector) -> Result<GradientMatrix> {
        Ok(self.0[stage].clone())
    }
}

/// Plain projected gradient on `Σ (gᵢᵀ(w − w̄))² + nλ‖w − w̄‖²`, one stage at a time.
fn projected_gradient(
    gs: &[GradientMatrix],
    w0: &WeightVector,
    counts: &[usize],
    lambda: f64,
    steps: usize,
) -> Vec<WeightVector> {
    let mut trajectory = Vec::new();
    let mut wbar = w0.values().to_owned();
    let mut w = wbar.clone();
    for (g, &k) in gs.iter().zip(counts) {
        let n = g.n() as f64;
        let tau = step_size(g, lambda).unwrap();
        for _ in 0..steps {
            let delta: Array1<f64> = &w - &wbar;
            let grad = g.values().t().dot(&g.values().dot(&delta)) + &delta * (n * lambda);
            let half = WeightVector::new(&w - &(grad * tau)).unwrap();
            w = iht_project(&half, k).unwrap().into_inner();
            trajectory.push(WeightVector::new(w.clone()).unwrap());
        }
        wbar = w.clone();
    }
    trajectory
}

#[test]
fn diagonal_plan_reproduces_least_squares_projected_gradient() {
    let mut r = common::rng(21);
    let (n, p, stages, steps, lambda) = (20, 50, 6, 7, 0.01);
    let gs: Vec<GradientMatrix> = (0..stages).map(|_| common::gradients(&mut r, n, p)).collect();
    let w0 = common::weights(&mut r, p);
    let schedule = SparsitySchedule::exponential(0.0, 0.9, stages - 1, p).unwrap();
    let cfg = EwrConfig {
        inner_steps: steps,
        ..EwrConfig::least_squares(lambda)
    };
    assert_eq!(cfg.plan_solver, PlanSolver::Diagonal);
    let mut got = Vec::new();
    let mut hook = |_: usize, w: &WeightVector| got.push(w.clone());
    swap_prune_traced(&mut Fixed(gs.clone()), &w0, &schedule, &cfg, Some(&mut hook)).unwrap();
    let want = projected_gradient(&gs, &w0, schedule.counts(), lambda, steps);
    assert_eq!(got.len(), want.len());
    for (a, b) in got.iter().zip(&want) {
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() <= 1e-12, "{x} vs {y}");
        }
        assert_eq!(a.nonzero_count(), b.nonzero_count());
    }
}

#[test]
fn zero_gradients_leave_magnitude_pruning() {
    let mut r = common::rng(22);
    let p = 12;
    let w0 = common::weights(&mut r, p);
    let g = GradientMatrix::new(ndarray::Array2::zeros((5, p))).unwrap();
    let schedule = SparsitySchedule::from_counts(vec![p, p - 1], p).unwrap();
    for solver in [PlanSolver::Sinkhorn, PlanSolver::Diagonal, PlanSolver::Uniform] {
        let cfg = EwrConfig {
            plan_solver: solver,
            inner_steps: 3,
            ..EwrConfig::default()
        };
        let out = swap_prune(&mut Fixed(vec![g.clone(), g.clone()]), &w0, &schedule, &cfg);
        // Sinkhorn on all-zero projections has a constant cost and still solves.
        let out = out.unwrap();
        let smallest = (0..p)
            .min_by(|&a, &b| w0.as_slice()[a].abs().total_cmp(&w0.as_slice()[b].abs()))
            .unwrap();
        for i in 0..p {
            let want = if i == smallest { 0.0 } else { w0.as_slice()[i] };
            assert_eq!(out.final_weights.as_slice()[i], want);
        }
    }
}

fn small_task() -> TaskSpec {
    TaskSpec {
        data: DataSpec::Blobs {
            samples: 200,
            dim: 8,
            classes: 3,
            spread: 0.3,
        },
        hidden: vec![6],
        epochs: 5,
        fisher_samples: 12,
        noise_fraction: 0.25,
        noise_level: 2.0,
        ..TaskSpec::default()
    }
}

#[test]
fn seed_results_do_not_depend_on_other_seeds() {
    let task = small_task();
    let schedule = ScheduleSpec {
        kind: ScheduleKind::Linear,
        initial: 0.0,
        target: 0.8,
        stages: 3,
    };
    let lr = EwrConfig {
        inner_steps: 3,
        ..EwrConfig::least_squares(0.01)
    };
    let ewr = EwrConfig {
        inner_steps: 3,
        ..EwrConfig::default()
    };
    let alone = compare_lr_ewr(&task, &schedule, &lr, &ewr, &[3], 0.9).unwrap();
    let mixed = compare_lr_ewr(&task, &schedule, &lr, &ewr, &[5, 3, 1], 0.9).unwrap();
    let pick = |rep: &swap_core::pruner::CompareReport| {
        rep.rows.iter().filter(|r| r.seed == 3).cloned().collect::<Vec<_>>()
    };
    assert_eq!(pick(&alone), pick(&mixed));
    assert!(!pick(&alone).is_empty());
}

#[test]
fn prune_runs_are_reproducible() {
    let task = PreparedTask::prepare(&small_task(), 9).unwrap();
    let schedule = SparsitySchedule::exponential(0.0, 0.9, 4, task.num_params()).unwrap();
    let cfg = EwrConfig {
        inner_steps: 4,
        ..EwrConfig::default()
    };
    let a = swap_prune(&mut task.gradient_source(), task.model.weights(), &schedule, &cfg).unwrap();
    let b = swap_prune(&mut task.gradient_source(), task.model.weights(), &schedule, &cfg).unwrap();
    assert!(a.same_outcome(&b));
    for (rec, &k) in a.stages.iter().zip(schedule.counts()) {
        assert!(rec.nonzeros <= k);
    }
}

#[test]
fn pruned_forward_equals_forward_on_masked_layers() {
    let task = PreparedTask::prepare(&small_task(), 4).unwrap();
    let schedule = SparsitySchedule::exponential(0.0, 0.7, 3, task.num_params()).unwrap();
    let out = swap_prune(
        &mut task.gradient_source(),
        task.model.weights(),
        &schedule,
        &EwrConfig::default(),
    )
    .unwrap();
    let pruned = task.model.with_weights(out.final_weights.clone()).unwrap();
    // Zeroing the original layers entry by entry gives the same network.
    let keep = out.final_weights.as_slice();
    let mut flat_idx = 0;
    let masked: Vec<_> = task
        .model
        .unflatten()
        .into_iter()
        .map(|(mut w, mut b)| {
            for v in w.iter_mut() {
                if keep[flat_idx] == 0.0 {
                    *v = 0.0;
                } else {
                    assert_eq!(*v, keep[flat_idx]);
                }
                flat_idx += 1;
            }
            for v in b.iter_mut() {
                *v = keep[flat_idx];
                flat_idx += 1;
            }
            (w, b)
        })
        .collect();
    let rebuilt = swap_core::model::TinyMlp::from_layers(&masked, task.model.activation()).unwrap();
    let test = &task.data.test;
    for i in 0..test.len() {
        let row = test.features.row(i).to_vec();
        assert_eq!(pruned.logits(&row), rebuilt.logits(&row));
    }
}
