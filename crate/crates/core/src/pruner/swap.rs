//! The staged prune loop: fresh gradients, transport plan, gradient step,
//! hard thresholding, reference update.

use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::SparsitySchedule;
use crate::error::{ensure_len, Error, Result};
use crate::ewr::{
    iht_project_masked, step_direction, step_size, EwrConfig, GradientMatrix, PlanRefresh, PlanSolver, WeightVector,
};
use crate::ot::{closed_form_plan, fixed_plan, sinkhorn_plan, uniform_marginal, CostMatrix, TransportPlan};

/// Metrics a gradient source can report for a candidate weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageEval {
    pub train_loss: f64,
    pub test_loss: f64,
    pub accuracy: f64,
    pub top5_accuracy: Option<f64>,
}

/// Supplies one gradient matrix per stage.
pub trait GradientSource {
    fn num_params(&self) -> usize;

    /// Per-sample gradients for stage `stage`, evaluated at `reference`.
    fn gradients(&mut self, stage: usize, reference: &WeightVector) -> Result<GradientMatrix>;

    fn evaluate(&self, _weights: &WeightVector) -> Result<Option<StageEval>> {
        Ok(None)
    }

    /// Entries that hard thresholding must never zero.
    fn protected(&self) -> Option<Vec<bool>> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanStats {
    /// Sinkhorn iterations summed over the stage's plan solves.
    pub iterations: usize,
    pub max_residual: f64,
    pub log_domain_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub target_nonzeros: usize,
    pub scheduled_sparsity: f64,
    pub nonzeros: usize,
    pub step_size: f64,
    pub eval: Option<StageEval>,
    pub plan: PlanStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneResult {
    pub final_weights: WeightVector,
    pub stages: Vec<StageRecord>,
    /// Wall-clock seconds per stage; not part of any report.
    #[serde(skip)]
    pub stage_seconds: Vec<f64>,
}

impl PruneResult {
    /// Equality of everything except timings.
    pub fn same_outcome(&self, other: &PruneResult) -> bool {
        self.final_weights == other.final_weights && self.stages == other.stages
    }
}

/// Weight trajectory hook, called after every inner step with the stage index
/// and the thresholded weights.
pub type TrajectoryHook<'a> = &'a mut dyn FnMut(usize, &WeightVector);

pub fn swap_prune(
    source: &mut dyn GradientSource,
    wbar0: &WeightVector,
    schedule: &SparsitySchedule,
    cfg: &EwrConfig,
) -> Result<PruneResult> {
    swap_prune_traced(source, wbar0, schedule, cfg, None)
}

pub fn swap_prune_traced(
    source: &mut dyn GradientSource,
    wbar0: &WeightVector,
    schedule: &SparsitySchedule,
    cfg: &EwrConfig,
    mut hook: Option<TrajectoryHook<'_>>,
) -> Result<PruneResult> {
    cfg.validate()?;
    let p = source.num_params();
    ensure_len("initial weights vs source parameters", p, wbar0.len())?;
    ensure_len("schedule parameters vs source parameters", p, schedule.num_params())?;
    let protected = source.protected();

    let mut reference = wbar0.clone();
    let mut w = wbar0.clone();
    let mut stages = Vec::with_capacity(schedule.len());
    let mut stage_seconds = Vec::with_capacity(schedule.len());

    for (t, &k) in schedule.counts().iter().enumerate() {
        let started = Instant::now();
        let wrap = |e: Error| Error::Stage {
            stage: t,
            source: Box::new(e),
        };
        let g = source.gradients(t, &reference).map_err(wrap)?;
        ensure_len("gradient columns", p, g.p()).map_err(wrap)?;
        let tau = step_size(&g, cfg.lambda).map_err(wrap)?;
        let scale = step_scale(&g, tau);
        let y = g.project(&reference).map_err(wrap)?;
        let mut stats = PlanStats::default();

        let mut plan = None;
        for _ in 0..cfg.inner_steps {
            if plan.is_none() || cfg.plan_refresh == PlanRefresh::PerStep {
                let x = g.project(&w).map_err(wrap)?;
                plan = Some(solve_plan(cfg, &x, &y, &mut stats).map_err(wrap)?);
            }
            let plan = plan.as_ref().expect("plan set above");
            let dir = step_direction(cfg.direction, &g, &w, &reference, plan, cfg.lambda).map_err(wrap)?;
            let half = WeightVector::new(&w.values() - &(dir * scale)).map_err(wrap)?;
            w = iht_project_masked(&half, k, protected.as_deref()).map_err(wrap)?;
            if let Some(h) = hook.as_mut() {
                h(t, &w);
            }
        }
        if !cfg.freeze_reference {
            reference = w.clone();
        }

        stages.push(StageRecord {
            stage: t,
            target_nonzeros: k,
            scheduled_sparsity: schedule.fractions()[t],
            nonzeros: w.nonzero_count(),
            step_size: tau,
            eval: source.evaluate(&w).map_err(wrap)?,
            plan: stats,
        });
        stage_seconds.push(started.elapsed().as_secs_f64());
    }

    Ok(PruneResult {
        final_weights: w,
        stages,
        stage_seconds,
    })
}

/// Multiplier applied to the plan direction in the loop.
///
/// The plan carries total mass 1 while `τ = 1/(nλ + ‖G‖²_op)` is matched to
/// the least-squares objective, whose per-sample weights are 1. Scaling the
/// direction by `n` makes the diagonal plan reproduce least-squares projected
/// gradient exactly and keeps the step within the descent bound.
pub fn step_scale(g: &GradientMatrix, tau: f64) -> f64 {
    tau * g.n() as f64
}

/// Plan between the current projections `x` and the reference projections `y`.
pub fn solve_plan(cfg: &EwrConfig, x: &Array1<f64>, y: &Array1<f64>, stats: &mut PlanStats) -> Result<TransportPlan> {
    let n = x.len();
    if let Some(kind) = cfg.plan_solver.fixed_kind() {
        return fixed_plan(kind, n);
    }
    let sk = cfg.sinkhorn();
    let (plan, s) = match cfg.plan_solver {
        PlanSolver::Sinkhorn => {
            let cost = CostMatrix::build(x.view(), y.view())?;
            let m = uniform_marginal(n);
            sinkhorn_plan(&cost, m.view(), m.view(), cfg.epsilon, &sk)?
        }
        PlanSolver::ClosedForm => {
            let (plan, _, s) = closed_form_plan(x.view(), y.view(), cfg.epsilon, cfg.cross_covariance, &sk)?;
            (plan, s)
        }
        PlanSolver::Diagonal | PlanSolver::Uniform => unreachable!("handled above"),
    };
    stats.iterations += s.iterations;
    stats.max_residual = stats.max_residual.max(s.residual);
    stats.log_domain_solves += usize::from(s.log_domain);
    Ok(plan)
}
