//! Dense helpers shared by the OT and regression code.

use ndarray::{Array1, ArrayView1, ArrayView2};

/// Power-iteration controls for [`spectral_norm`].
pub const POWER_REL_TOL: f64 = 1e-9;
pub const POWER_MAX_ITER: usize = 10_000;

/// Largest singular value of `a`.
///
/// Runs power iteration on the smaller of the two Gram matrices `aᵀa` / `aaᵀ`
/// (they share their nonzero spectrum) and stops once the Rayleigh quotient
/// changes by less than [`POWER_REL_TOL`] relative. A zero matrix returns 0.
pub fn spectral_norm(a: ArrayView2<'_, f64>) -> f64 {
    let (n, p) = a.dim();
    if n == 0 || p == 0 || a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let gram = if n <= p { a.dot(&a.t()) } else { a.t().dot(&a) };
    largest_eigenvalue_psd(gram.view()).max(0.0).sqrt()
}

fn largest_eigenvalue_psd(gram: ArrayView2<'_, f64>) -> f64 {
    let m = gram.nrows();
    // Deterministic start with no special alignment to coordinate axes.
    let mut v: Array1<f64> = (0..m)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    normalize(&mut v);

    let mut rayleigh = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = gram.dot(&v);
        let next = v.dot(&w);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - rayleigh).abs() <= POWER_REL_TOL * next.abs() {
            return next;
        }
        rayleigh = next;
    }
    rayleigh
}

fn normalize(v: &mut Array1<f64>) {
    let norm = v.dot(v).sqrt();
    if norm > 0.0 {
        v.mapv_inplace(|x| x / norm);
    }
}

pub fn squared_norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Population mean and variance (divisor n).
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Trace of the sample covariance of the rows of `m` (divisor n - 1).
pub fn covariance_trace(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    if n < 2 {
        return 0.0;
    }
    let mean = m.mean_axis(ndarray::Axis(0)).expect("nonempty rows");
    let mut total = 0.0;
    for row in m.rows() {
        total += row
            .iter()
            .zip(mean.iter())
            .map(|(x, mu)| (x - mu).powi(2))
            .sum::<f64>();
    }
    total / (n as f64 - 1.0)
}
