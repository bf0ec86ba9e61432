//! Entropic optimal transport between two 1-D empirical distributions.
//!
//! Plans are dense `n × n` matrices. Costs are squared scalar distances and
//! are used unnormalized, so `epsilon` lives on the same scale as the squared
//! projections it regularizes.

mod closed_form;
mod sinkhorn;
mod witness;

pub use closed_form::{closed_form_plan, ClosedFormParams, CrossCovariance, MAX_CORRELATION};
pub use sinkhorn::{sinkhorn_plan, KernelDomain, SinkhornConfig, SinkhornStats};
pub use witness::{hull_equality_witness, ConvexWeights, WITNESS_BISECTION_DEPTH, WITNESS_PG_ITERS};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

/// Pairwise squared distances `C[i][j] = (x_i - y_j)²`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix(Array2<f64>);

impl CostMatrix {
    pub fn build(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<Self> {
        ensure_len("cost matrix inputs", x.len(), y.len())?;
        if x.is_empty() {
            return Err(Error::InvalidArgument("cost matrix needs n >= 1".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cost matrix inputs"));
        }
        let n = x.len();
        let values = Array2::from_shape_fn((n, n), |(i, j)| {
            let d = x[i] - y[j];
            d * d
        });
        Ok(Self(values))
    }

    /// Wraps an arbitrary nonnegative cost table (tests and oracles use this).
    pub fn from_values(values: Array2<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::DimensionMismatch {
                context: "square cost matrix",
                expected: values.nrows(),
                actual: values.ncols(),
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("cost matrix"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("cost entries must be nonnegative".into()));
        }
        Ok(Self(values))
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

/// A coupling of two discrete marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    values: Array2<f64>,
    row_marginal: Array1<f64>,
    col_marginal: Array1<f64>,
}

impl TransportPlan {
    /// Builds a plan after checking shapes and nonnegativity. Marginal
    /// feasibility is a separate check, see [`TransportPlan::validate`].
    pub fn new(values: Array2<f64>, row_marginal: Array1<f64>, col_marginal: Array1<f64>) -> Result<Self> {
        ensure_len("plan rows vs row marginal", values.nrows(), row_marginal.len())?;
        ensure_len("plan cols vs column marginal", values.ncols(), col_marginal.len())?;
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("transport plan"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("transport plan has negative entries".into()));
        }
        Ok(Self {
            values,
            row_marginal,
            col_marginal,
        })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row_marginal(&self) -> ArrayView1<'_, f64> {
        self.row_marginal.view()
    }

    pub fn col_marginal(&self) -> ArrayView1<'_, f64> {
        self.col_marginal.view()
    }

    pub fn into_values(self) -> Array2<f64> {
        self.values
    }

    /// `max(‖rowsums − μ‖∞, ‖colsums − ν‖∞)`.
    pub fn marginal_residual(&self) -> f64 {
        let rows = self.values.sum_axis(Axis(1));
        let cols = self.values.sum_axis(Axis(0));
        let r = rows
            .iter()
            .zip(self.row_marginal.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let c = cols
            .iter()
            .zip(self.col_marginal.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        r.max(c)
    }

    pub fn validate(&self, tol: f64) -> Result<()> {
        let residual = self.marginal_residual();
        if residual > tol {
            return Err(Error::InfeasiblePlan { residual, tol });
        }
        Ok(())
    }
}

/// The two closed-form extreme plans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FixedPlanKind {
    /// `diag(1/n)`: one-to-one matching, the least-squares regime.
    Diagonal,
    /// `(1/n²)·11ᵀ`: the infinite-epsilon limit.
    Uniform,
}

pub fn uniform_marginal(n: usize) -> Array1<f64> {
    Array1::from_elem(n, 1.0 / n as f64)
}

pub fn fixed_plan(kind: FixedPlanKind, n: usize) -> Result<TransportPlan> {
    if n == 0 {
        return Err(Error::InvalidArgument("fixed plan needs n >= 1".into()));
    }
    let inv = 1.0 / n as f64;
    let values = match kind {
        FixedPlanKind::Diagonal => Array2::from_diag_elem(n, inv),
        FixedPlanKind::Uniform => Array2::from_elem((n, n), inv * inv),
    };
    TransportPlan::new(values, uniform_marginal(n), uniform_marginal(n))
}

/// Transport cost plus `epsilon` times the KL divergence of the plan from the
/// product of its marginals. Zero-mass entries contribute nothing to the
/// entropy term.
pub fn ot_objective(cost: &CostMatrix, plan: &TransportPlan, epsilon: f64) -> Result<f64> {
    ensure_len("objective cost vs plan", cost.n(), plan.n())?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be >= 0, got {epsilon}")));
    }
    Ok(transport_cost(cost, plan) + epsilon * plan_kl(plan))
}

/// `Σ C_ij π_ij`.
pub fn transport_cost(cost: &CostMatrix, plan: &TransportPlan) -> f64 {
    cost.0
        .iter()
        .zip(plan.values.iter())
        .map(|(c, p)| c * p)
        .sum()
}

/// `Σ π_ij log(π_ij / (μ_i ν_j))`, with `0 log 0 = 0`.
pub fn plan_kl(plan: &TransportPlan) -> f64 {
    let mut total = 0.0;
    for ((i, j), &p) in plan.values.indexed_iter() {
        if p > 0.0 {
            total += p * (p / (plan.row_marginal[i] * plan.col_marginal[j])).ln();
        }
    }
    total
}
