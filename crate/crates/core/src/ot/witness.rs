//! Constructive convex-hull distance equality.
//!
//! For a point `x`, vertices `S = {y_j}` and convex weights `ν̂`, finds weights
//! `ν` with `‖x − Σ ν_j y_j‖² = Σ ν̂_j ‖x − y_j‖²`. The left side is continuous
//! along any segment of the simplex, is at most the target at the hull point
//! closest to `x` and at least the target at the farthest vertex, so bisection
//! along the segment between them locates the equality.

use ndarray::{Array1, ArrayView1, ArrayView2};

use crate::error::{ensure_len, Error, Result};

pub const WITNESS_PG_ITERS: usize = 200;
pub const WITNESS_BISECTION_DEPTH: usize = 64;

/// Convex-combination coefficients: each in `[0, 1]`, summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexWeights(Vec<f64>);

impl ConvexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidArgument("convex weights must be nonempty".into()));
        }
        if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
            return Err(Error::InvalidArgument("convex weights must lie in [0, 1]".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("convex weights sum to {total}, expected 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Result<Self> {
        Self::new(vec![1.0 / m as f64; m])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Returns weights whose barycenter of `points` (rows) sits at squared
/// distance `Σ ν̂_j ‖x − y_j‖²` from `x`, within `tol`.
pub fn hull_equality_witness(
    x: ArrayView1<'_, f64>,
    points: ArrayView2<'_, f64>,
    target_weights: &ConvexWeights,
    tol: f64,
) -> Result<ConvexWeights> {
    let (m, d) = points.dim();
    ensure_len("witness point dimension", d, x.len())?;
    ensure_len("witness weight count", m, target_weights.len())?;
    if m == 0 {
        return Err(Error::InvalidArgument("witness needs at least one point".into()));
    }
    let nu_hat = Array1::from(target_weights.as_slice().to_vec());
    let sq_dist: Array1<f64> = points
        .rows()
        .into_iter()
        .map(|y| y.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let target = nu_hat.dot(&sq_dist);
    let f = |nu: &Array1<f64>| -> f64 {
        let bary = points.t().dot(nu);
        bary.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum()
    };

    // Lower endpoint: the hull point nearest x. Jensen gives f(ν̂) <= target,
    // so ν̂ backs up an under-converged projection.
    let nearest = closest_hull_weights(x, points);
    let lo = if f(&nearest) <= f(&nu_hat) { nearest } else { nu_hat };
    let far = sq_dist
        .iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > sq_dist[best] { j } else { best });
    let mut hi = Array1::zeros(m);
    hi[far] = 1.0;

    let residual = |nu: &Array1<f64>| f(nu) - target;
    let (r_lo, r_hi) = (residual(&lo), residual(&hi));
    if r_lo.abs() <= tol {
        return into_weights(lo);
    }
    if r_hi.abs() <= tol {
        return into_weights(hi);
    }
    if r_lo > 0.0 || r_hi < 0.0 {
        return Err(Error::WitnessBracket {
            residual: r_lo.abs().min(r_hi.abs()),
        });
    }

    let point_at = |t: f64| &lo * (1.0 - t) + &hi * t;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    for _ in 0..WITNESS_BISECTION_DEPTH {
        let mid = 0.5 * (a + b);
        if residual(&point_at(mid)) <= 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let (wa, wb) = (point_at(a), point_at(b));
    let best = if residual(&wa).abs() <= residual(&wb).abs() { wa } else { wb };
    let r = residual(&best).abs();
    if r > tol {
        return Err(Error::WitnessBracket { residual: r });
    }
    into_weights(best)
}

fn into_weights(mut nu: Array1<f64>) -> Result<ConvexWeights> {
    nu.mapv_inplace(|v| v.clamp(0.0, 1.0));
    let total = nu.sum();
    nu.mapv_inplace(|v| v / total);
    ConvexWeights::new(nu.to_vec())
}

/// Projected gradient on the simplex for `min ‖x − Sᵀν‖²`.
fn closest_hull_weights(x: ArrayView1<'_, f64>, points: ArrayView2<'_, f64>) -> Array1<f64> {
    let m = points.nrows();
    let max_sq_norm = points
        .rows()
        .into_iter()
        .map(|r| r.dot(&r))
        .fold(0.0, f64::max);
    let mut nu = Array1::from_elem(m, 1.0 / m as f64);
    if max_sq_norm == 0.0 {
        return nu;
    }
    let step = 1.0 / max_sq_norm;
    for _ in 0..WITNESS_PG_ITERS {
        let bary = points.t().dot(&nu);
        let grad = points.dot(&(&bary - &x));
        nu = project_to_simplex(&(&nu - &(grad * step)));
    }
    nu
}

/// Euclidean projection onto the probability simplex (sort-and-threshold).
pub(crate) fn project_to_simplex(v: &Array1<f64>) -> Array1<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumulative += s;
        let candidate = (cumulative - 1.0) / (k as f64 + 1.0);
        if s - candidate > 0.0 {
            theta = candidate;
        }
    }
    v.mapv(|e| (e - theta).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn residual(x: ArrayView1<'_, f64>, pts: ArrayView2<'_, f64>, w: &ConvexWeights, target: &ConvexWeights) -> f64 {
        let nu = Array1::from(w.as_slice().to_vec());
        let bary = pts.t().dot(&nu);
        let lhs: f64 = bary.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        let rhs: f64 = pts
            .rows()
            .into_iter()
            .zip(target.as_slice())
            .map(|(y, t)| t * y.iter().zip(x.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        (lhs - rhs).abs()
    }

    #[test]
    fn single_point() {
        let pts = array![[1.5, -2.0]];
        let x = array![0.0, 0.0];
        let w = hull_equality_witness(x.view(), pts.view(), &ConvexWeights::new(vec![1.0]).unwrap(), 1e-12).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
    }

    #[test]
    fn symmetric_pair_lands_on_a_vertex() {
        let pts = array![[-1.0], [1.0]];
        let x = array![0.0];
        let target = ConvexWeights::uniform(2).unwrap();
        let w = hull_equality_witness(x.view(), pts.view(), &target, 1e-10).unwrap();
        let s = w.as_slice();
        assert!((s[0] - 1.0).abs() < 1e-9 || (s[1] - 1.0).abs() < 1e-9, "{s:?}");
        assert!(residual(x.view(), pts.view(), &w, &target) <= 1e-10);
    }

    #[test]
    fn one_sided_pair_matches_closed_form() {
        // (ν₁ + 2ν₂)² = 2.5 with ν₁ + ν₂ = 1 gives ν₂ = √2.5 − 1.
        let pts = array![[1.0], [2.0]];
        let x = array![0.0];
        let target = ConvexWeights::uniform(2).unwrap();
        let w = hull_equality_witness(x.view(), pts.view(), &target, 1e-10).unwrap();
        let nu2 = 2.5f64.sqrt() - 1.0;
        assert!((w.as_slice()[1] - nu2).abs() < 1e-9);
        assert!((w.as_slice()[0] - (1.0 - nu2)).abs() < 1e-9);
        assert!((w.as_slice()[1] - 0.5811).abs() < 1e-4);
    }

    #[test]
    fn convex_weights_validation() {
        assert!(ConvexWeights::new(vec![]).is_err());
        assert!(ConvexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(ConvexWeights::new(vec![-0.1, 1.1]).is_err());
        assert!(ConvexWeights::new(vec![0.25, 0.75]).is_ok());
    }

    #[test]
    fn simplex_projection() {
        let p = project_to_simplex(&array![0.5, 0.5]);
        assert_eq!(p, array![0.5, 0.5]);
        let p = project_to_simplex(&array![2.0, 0.0]);
        assert_eq!(p, array![1.0, 0.0]);
        let p = project_to_simplex(&array![0.2, 0.2, 0.2]);
        assert!((p.sum() - 1.0).abs() < 1e-15);
    }
}
