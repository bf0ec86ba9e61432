//! Sparse entropic Wasserstein regression: objectives, gradient, step size,
//! hard thresholding and the plan-weighted neighborhood average.
//!
//! Notation used throughout: `G` is the `n × p` matrix of per-sample loss
//! gradients, `x = Gw` and `y = Gw̄` are the projections of the candidate and
//! reference weights, and `Π` is a transport plan between `x` and `y`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::linalg::{spectral_norm, squared_norm};
use crate::ot::{plan_kl, CrossCovariance, FixedPlanKind, SinkhornConfig, TransportPlan};

/// Marginal tolerance accepted by the objective and gradient routines.
pub const PLAN_FEASIBILITY_TOL: f64 = 1e-6;

/// Per-sample gradients stacked as rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientMatrix(Array2<f64>);

impl GradientMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument("gradient matrix needs n >= 1 and p >= 1".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("gradient matrix"));
        }
        Ok(Self(values))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    /// `G · w`.
    pub fn project(&self, w: &WeightVector) -> Result<Array1<f64>> {
        ensure_len("weights vs gradient columns", self.p(), w.len())?;
        Ok(self.0.dot(&w.0))
    }
}

/// Flattened model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Array1<f64>);

impl WeightVector {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("weight vector"));
        }
        Ok(Self(values))
    }

    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(Array1::from(values))
    }

    pub fn zeros(p: usize) -> Self {
        Self(Array1::zeros(p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> ArrayView1<'_, f64> {
        self.0.view()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("weight vectors are contiguous")
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }

    pub fn nonzero_count(&self) -> usize {
        self.0.iter().filter(|&&v| v != 0.0).count()
    }
}

/// How the transport plan of each pruning step is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanSolver {
    Sinkhorn,
    ClosedForm,
    Diagonal,
    Uniform,
}

impl PlanSolver {
    pub fn fixed_kind(self) -> Option<FixedPlanKind> {
        match self {
            PlanSolver::Diagonal => Some(FixedPlanKind::Diagonal),
            PlanSolver::Uniform => Some(FixedPlanKind::Uniform),
            _ => None,
        }
    }

    pub fn needs_epsilon(self) -> bool {
        matches!(self, PlanSolver::Sinkhorn | PlanSolver::ClosedForm)
    }
}

/// Update direction used by the pruning loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepDirection {
    /// `Gᵀ(Π(Gw − Gw̄)) + λ(w − w̄)`, the plan applied to the residual vector.
    #[default]
    PlanResidual,
    /// The exact gradient of the half objective at fixed plan, see [`ewr_gradient`].
    ExactGradient,
}

/// When the plan is recomputed within a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanRefresh {
    /// Once, from the projections at the start of the stage.
    #[default]
    PerStage,
    /// Before every inner step, from the current projections.
    PerStep,
}

/// Parameters of one pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwrConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub plan_solver: PlanSolver,
    pub sinkhorn_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub cross_covariance: CrossCovariance,
    pub direction: StepDirection,
    /// Gradient/threshold iterations per stage.
    pub inner_steps: usize,
    pub plan_refresh: PlanRefresh,
    /// Keep the original reference weights for every stage instead of
    /// replacing them with the previous stage's result.
    pub freeze_reference: bool,
}

impl Default for EwrConfig {
    fn default() -> Self {
        let sk = SinkhornConfig::default();
        Self {
            lambda: 0.01,
            epsilon: 1.0,
            plan_solver: PlanSolver::Sinkhorn,
            sinkhorn_tol: sk.tol,
            max_iter: sk.max_iter,
            seed: 0,
            cross_covariance: CrossCovariance::default(),
            direction: StepDirection::default(),
            inner_steps: 1,
            plan_refresh: PlanRefresh::default(),
            freeze_reference: false,
        }
    }
}

impl EwrConfig {
    /// The least-squares baseline: diagonal plan, no entropy.
    pub fn least_squares(lambda: f64) -> Self {
        Self {
            lambda,
            epsilon: 0.0,
            plan_solver: PlanSolver::Diagonal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.plan_solver.needs_epsilon() && !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must be finite and > 0 for the {:?} plan solver, got {}",
                self.plan_solver, self.epsilon
            )));
        }
        if !(self.sinkhorn_tol > 0.0) {
            return Err(Error::InvalidArgument("sinkhorn_tol must be > 0".into()));
        }
        if self.max_iter == 0 || self.inner_steps == 0 {
            return Err(Error::InvalidArgument("max_iter and inner_steps must be >= 1".into()));
        }
        Ok(())
    }

    pub fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig {
            tol: self.sinkhorn_tol,
            max_iter: self.max_iter,
            ..SinkhornConfig::default()
        }
    }
}

fn check_dims(g: &GradientMatrix, w: &WeightVector, wbar: &WeightVector) -> Result<()> {
    ensure_len("w vs gradient columns", g.p(), w.len())?;
    ensure_len("w_bar vs gradient columns", g.p(), wbar.len())
}

fn check_plan(g: &GradientMatrix, plan: &TransportPlan) -> Result<()> {
    ensure_len("plan size vs sample count", g.n(), plan.n())?;
    plan.validate(PLAN_FEASIBILITY_TOL)
}

/// Least-squares pruning objective `Σᵢ (gᵢᵀw − gᵢᵀw̄)² + nλ‖w − w̄‖²`.
pub fn lr_objective(g: &GradientMatrix, w: &WeightVector, wbar: &WeightVector, lambda: f64) -> Result<f64> {
    check_dims(g, w, wbar)?;
    let delta = &w.0 - &wbar.0;
    let r = g.0.dot(&delta);
    Ok(squared_norm(r.view()) + g.n() as f64 * lambda * squared_norm(delta.view()))
}

/// Entropic Wasserstein regression objective at a fixed plan:
/// `Σᵢⱼ (xᵢ − yⱼ)² πᵢⱼ + ε·KL(Π‖μνᵀ) + λ‖w − w̄‖²`.
pub fn ewr_objective(
    g: &GradientMatrix,
    w: &WeightVector,
    wbar: &WeightVector,
    plan: &TransportPlan,
    lambda: f64,
    epsilon: f64,
) -> Result<f64> {
    check_dims(g, w, wbar)?;
    check_plan(g, plan)?;
    let x = g.0.dot(&w.0);
    let y = g.0.dot(&wbar.0);
    let pi = plan.values();
    let mut cost = 0.0;
    for ((i, j), &p) in pi.indexed_iter() {
        let d = x[i] - y[j];
        cost += d * d * p;
    }
    let kl = if epsilon > 0.0 { epsilon * plan_kl(plan) } else { 0.0 };
    let delta = &w.0 - &wbar.0;
    Ok(cost + kl + lambda * squared_norm(delta.view()))
}

/// Gradient of `½·(Σᵢⱼ (xᵢ − yⱼ)² πᵢⱼ + λ‖w − w̄‖²)` with the plan held fixed:
/// `Gᵀ(diag(Π1)·Gw − Π·Gw̄) + λ(w − w̄)`.
///
/// For a diagonal plan this coincides with `Gᵀ(Π(Gw − Gw̄)) + λ(w − w̄)`.
pub fn ewr_gradient(
    g: &GradientMatrix,
    w: &WeightVector,
    wbar: &WeightVector,
    plan: &TransportPlan,
    lambda: f64,
) -> Result<Array1<f64>> {
    check_dims(g, w, wbar)?;
    check_plan(g, plan)?;
    let x = g.0.dot(&w.0);
    let y = g.0.dot(&wbar.0);
    let pi = plan.values();
    let row_mass = pi.sum_axis(Axis(1));
    let inner = &(&row_mass * &x) - &pi.dot(&y);
    Ok(g.0.t().dot(&inner) + (&w.0 - &wbar.0) * lambda)
}

/// `Gᵀ(Π(Gw − Gw̄)) + λ(w − w̄)`.
pub fn plan_residual_direction(
    g: &GradientMatrix,
    w: &WeightVector,
    wbar: &WeightVector,
    plan: &TransportPlan,
    lambda: f64,
) -> Result<Array1<f64>> {
    check_dims(g, w, wbar)?;
    check_plan(g, plan)?;
    let residual = g.0.dot(&(&w.0 - &wbar.0));
    Ok(g.0.t().dot(&plan.values().dot(&residual)) + (&w.0 - &wbar.0) * lambda)
}

pub fn step_direction(
    direction: StepDirection,
    g: &GradientMatrix,
    w: &WeightVector,
    wbar: &WeightVector,
    plan: &TransportPlan,
    lambda: f64,
) -> Result<Array1<f64>> {
    match direction {
        StepDirection::PlanResidual => plan_residual_direction(g, w, wbar, plan, lambda),
        StepDirection::ExactGradient => ewr_gradient(g, w, wbar, plan, lambda),
    }
}

/// Largest singular value of `G`.
pub fn op_norm(g: &GradientMatrix) -> f64 {
    spectral_norm(g.values())
}

/// `τ = 1 / (nλ + ‖G‖²_op)`.
pub fn step_size(g: &GradientMatrix, lambda: f64) -> Result<f64> {
    let s = op_norm(g);
    let lipschitz = g.n() as f64 * lambda + s * s;
    if !(lipschitz > 0.0) {
        return Err(Error::InvalidArgument(
            "Lipschitz constant is zero (zero gradient matrix and lambda = 0)".into(),
        ));
    }
    Ok(1.0 / lipschitz)
}

/// Keeps the `k` entries of largest magnitude and zeroes the rest. Ties go to
/// the lower index.
pub fn iht_project(w: &WeightVector, k: usize) -> Result<WeightVector> {
    iht_project_masked(w, k, None)
}

/// Like [`iht_project`], but entries flagged in `protected` are always kept
/// and do not count against `k`.
pub fn iht_project_masked(w: &WeightVector, k: usize, protected: Option<&[bool]>) -> Result<WeightVector> {
    let p = w.len();
    if k > p {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds parameter count {p}")));
    }
    if let Some(mask) = protected {
        ensure_len("protected mask", p, mask.len())?;
    }
    let is_protected = |i: usize| protected.is_some_and(|m| m[i]);
    let mut order: Vec<usize> = (0..p).filter(|&i| !is_protected(i) && w.0[i] != 0.0).collect();
    // Stable sort keeps lower indices first among equal magnitudes.
    order.sort_by(|&a, &b| w.0[b].abs().total_cmp(&w.0[a].abs()));
    let mut out = Array1::zeros(p);
    for &i in order.iter().take(k) {
        out[i] = w.0[i];
    }
    for i in (0..p).filter(|&i| is_protected(i)) {
        out[i] = w.0[i];
    }
    Ok(WeightVector(out))
}

/// Rows `G′ᵢ = Σⱼ (πᵢⱼ / Σⱼπᵢⱼ) Gⱼ`: each gradient replaced by the
/// plan-weighted average of its neighborhood.
pub fn neighborhood_average(g: &GradientMatrix, plan: &TransportPlan) -> Result<GradientMatrix> {
    ensure_len("plan size vs sample count", g.n(), plan.n())?;
    let pi = plan.values();
    let mass = pi.sum_axis(Axis(1));
    if let Some(i) = mass.iter().position(|&m| !(m > 0.0)) {
        return Err(Error::ZeroPlanRow(i));
    }
    let weights = &pi / &mass.insert_axis(Axis(1));
    GradientMatrix::new(weights.dot(&g.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::fixed_plan;
    use ndarray::array;

    fn eye2() -> GradientMatrix {
        GradientMatrix::new(Array2::eye(2)).unwrap()
    }

    fn wv(v: &[f64]) -> WeightVector {
        WeightVector::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn lr_objective_examples() {
        let g = eye2();
        let wbar = wv(&[1.0, 1.0]);
        assert_eq!(lr_objective(&g, &wbar, &wbar, 0.3).unwrap(), 0.0);
        let w = wv(&[0.0, 1.0]);
        assert!((lr_objective(&g, &w, &wbar, 0.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((lr_objective(&g, &w, &wbar, 0.01).unwrap() - 1.02).abs() < 1e-15);
    }

    #[test]
    fn ewr_objective_examples() {
        let g = eye2();
        let wbar = wv(&[1.0, 1.0]);
        let w = wv(&[0.0, 1.0]);
        let diag = fixed_plan(FixedPlanKind::Diagonal, 2).unwrap();
        assert_eq!(ewr_objective(&g, &wbar, &wbar, &diag, 0.01, 0.0).unwrap(), 0.0);
        // ½·(0 − 1)² + 0.01·1
        let v = ewr_objective(&g, &w, &wbar, &diag, 0.01, 0.0).unwrap();
        assert!((v - 0.51).abs() < 1e-15);
        let lr = lr_objective(&g, &w, &wbar, 0.01).unwrap();
        assert!((v - lr / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ewr_objective_rejects_infeasible_plan() {
        let g = eye2();
        let w = wv(&[0.0, 1.0]);
        let bad = TransportPlan::new(array![[0.5, 0.5], [0.0, 0.0]], array![0.5, 0.5], array![0.5, 0.5]).unwrap();
        assert!(matches!(
            ewr_objective(&g, &w, &w, &bad, 0.0, 0.0),
            Err(Error::InfeasiblePlan { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let g = eye2();
        let wbar = wv(&[1.0, 1.0]);
        let diag = fixed_plan(FixedPlanKind::Diagonal, 2).unwrap();
        let zero = ewr_gradient(&g, &wbar, &wbar, &diag, 0.01).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let w = wv(&[0.0, 1.0]);
        let grad = ewr_gradient(&g, &w, &wbar, &diag, 0.01).unwrap();
        assert!((grad[0] + 0.51).abs() < 1e-15 && grad[1].abs() < 1e-15);
        let printed = plan_residual_direction(&g, &w, &wbar, &diag, 0.01).unwrap();
        assert_eq!(grad, printed);
    }

    #[test]
    fn plan_residual_direction_vanishes_at_reference() {
        let g = GradientMatrix::new(array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]).unwrap();
        let w = wv(&[0.7, -0.2]);
        let uni = fixed_plan(FixedPlanKind::Uniform, 3).unwrap();
        let d = plan_residual_direction(&g, &w, &w, &uni, 0.5).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
        // The exact gradient does not: the uniform plan pulls each x_i towards mean(y).
        let e = ewr_gradient(&g, &w, &w, &uni, 0.5).unwrap();
        assert!(e.iter().any(|&v| v.abs() > 1e-3));
    }

    #[test]
    fn step_size_examples() {
        assert!((step_size(&eye2(), 0.01).unwrap() - 1.0 / 1.02).abs() < 1e-12);
        assert!((step_size(&eye2(), 0.0).unwrap() - 1.0).abs() < 1e-12);
        let d = GradientMatrix::new(array![[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert!((step_size(&d, 0.5).unwrap() - 0.1).abs() < 1e-12);
        let z = GradientMatrix::new(Array2::zeros((2, 2))).unwrap();
        assert!(step_size(&z, 0.0).is_err());
        assert!((step_size(&z, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn iht_examples() {
        assert_eq!(iht_project(&wv(&[3.0, -5.0, 1.0]), 2).unwrap(), wv(&[3.0, -5.0, 0.0]));
        let w = wv(&[0.1, -2.0, 7.0, 0.0]);
        assert_eq!(iht_project(&w, 4).unwrap(), w);
        assert_eq!(iht_project(&wv(&[-2.0, 2.0, 0.0]), 1).unwrap(), wv(&[-2.0, 0.0, 0.0]));
        assert_eq!(iht_project(&wv(&[1.0, 2.0]), 0).unwrap(), wv(&[0.0, 0.0]));
        assert!(iht_project(&wv(&[1.0]), 2).is_err());
    }

    #[test]
    fn iht_masked_keeps_protected_entries() {
        let w = wv(&[0.1, 5.0, -0.2, 3.0]);
        let mask = [true, false, false, false];
        let out = iht_project_masked(&w, 1, Some(&mask)).unwrap();
        assert_eq!(out, wv(&[0.1, 5.0, 0.0, 0.0]));
    }

    #[test]
    fn neighborhood_average_extremes() {
        let g = GradientMatrix::new(array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.5]]).unwrap();
        let diag = fixed_plan(FixedPlanKind::Diagonal, 3).unwrap();
        let same = neighborhood_average(&g, &diag).unwrap();
        for (a, b) in same.values().iter().zip(g.values().iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let uni = fixed_plan(FixedPlanKind::Uniform, 3).unwrap();
        let avg = neighborhood_average(&g, &uni).unwrap();
        let mean = g.values().mean_axis(Axis(0)).unwrap();
        for row in avg.values().rows() {
            for (a, b) in row.iter().zip(mean.iter()) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn neighborhood_average_rejects_empty_rows() {
        let g = eye2();
        let plan = TransportPlan::new(array![[0.5, 0.5], [0.0, 0.0]], array![1.0, 0.0], array![0.5, 0.5]).unwrap();
        assert!(matches!(neighborhood_average(&g, &plan), Err(Error::ZeroPlanRow(1))));
    }

    #[test]
    fn config_validation() {
        assert!(EwrConfig::default().validate().is_ok());
        assert!(EwrConfig::least_squares(0.01).validate().is_ok());
        let bad = EwrConfig {
            epsilon: 0.0,
            ..EwrConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EwrConfig {
            lambda: -1.0,
            ..EwrConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
