//! Gaussian closed-form entropic OT plan.
//!
//! When both projections are treated as Gaussian, the entropic coupling is a
//! bivariate normal determined by the sample moments and `epsilon`. The plan
//! matrix is obtained by evaluating that density on the `(x_i, y_j)` grid and
//! scaling the grid onto the prescribed marginals.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::sinkhorn::scale_log_kernel;
use super::{uniform_marginal, SinkhornConfig, SinkhornStats, TransportPlan};
use crate::error::{ensure_len, Error, Result};
use crate::linalg::mean_var;

/// Upper bound applied to the coupling correlation so the density stays
/// non-degenerate.
pub const MAX_CORRELATION: f64 = 0.999;

/// Off-diagonal term of the coupling covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossCovariance {
    /// `½(d_ψ − ψ²)`: always yields a valid covariance, tends to `σ_aσ_b` as
    /// `epsilon → 0` and to 0 as `epsilon → ∞`.
    #[default]
    Shifted,
    /// `½·d_ψ` without the shift. Its correlation is `≥ 1` for every
    /// `epsilon > 0`, so it is clamped to [`MAX_CORRELATION`].
    Unshifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormParams {
    pub psi: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub var_x: f64,
    pub var_y: f64,
    pub d_psi: f64,
}

impl ClosedFormParams {
    pub fn new(mean_x: f64, mean_y: f64, var_x: f64, var_y: f64, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "closed-form plan needs a finite epsilon > 0, got {epsilon}"
            )));
        }
        if !(var_x > 0.0) {
            return Err(Error::DegenerateVariance("x"));
        }
        if !(var_y > 0.0) {
            return Err(Error::DegenerateVariance("y"));
        }
        let psi = (epsilon / 2.0).sqrt();
        let d_psi = (4.0 * var_x * var_y + psi.powi(4)).sqrt();
        Ok(Self {
            psi,
            mean_x,
            mean_y,
            var_x,
            var_y,
            d_psi,
        })
    }

    /// Moments use the population variance (divisor n).
    pub fn from_samples(x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>, epsilon: f64) -> Result<Self> {
        ensure_len("closed-form inputs", x.len(), y.len())?;
        if x.len() < 2 {
            return Err(Error::InvalidArgument("closed-form plan needs n >= 2".into()));
        }
        if !x.iter().chain(y.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("closed-form inputs"));
        }
        let (mean_x, var_x) = mean_var(x.as_slice().unwrap_or(&x.to_vec()));
        let (mean_y, var_y) = mean_var(y.as_slice().unwrap_or(&y.to_vec()));
        Self::new(mean_x, mean_y, var_x, var_y, epsilon)
    }

    pub fn cross_covariance(&self, variant: CrossCovariance) -> f64 {
        match variant {
            CrossCovariance::Shifted => 0.5 * (self.d_psi - self.psi * self.psi),
            CrossCovariance::Unshifted => 0.5 * self.d_psi,
        }
    }

    /// Correlation of the coupling, clamped to `[0, MAX_CORRELATION]`.
    pub fn correlation(&self, variant: CrossCovariance) -> f64 {
        let rho = self.cross_covariance(variant) / (self.var_x * self.var_y).sqrt();
        rho.clamp(0.0, MAX_CORRELATION)
    }
}

/// Closed-form plan between `x` and `y` with uniform marginals.
pub fn closed_form_plan(
    x: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    epsilon: f64,
    variant: CrossCovariance,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, ClosedFormParams, SinkhornStats)> {
    let params = ClosedFormParams::from_samples(x, y, epsilon)?;
    let rho = params.correlation(variant);
    let n = x.len();
    let (sx, sy) = (params.var_x.sqrt(), params.var_y.sqrt());
    let scale = 1.0 / (2.0 * (1.0 - rho * rho));
    let log_density = Array2::from_shape_fn((n, n), |(i, j)| {
        let a = (x[i] - params.mean_x) / sx;
        let b = (y[j] - params.mean_y) / sy;
        -(a * a - 2.0 * rho * a * b + b * b) * scale
    });
    let marginal = uniform_marginal(n);
    let (plan, stats) = scale_log_kernel(log_density.view(), marginal.view(), marginal.view(), cfg)?;
    Ok((plan, params, stats))
}
