//! Sinkhorn-Knopp scaling with an automatic log-domain fallback.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{CostMatrix, TransportPlan};
use crate::error::{ensure_len, Error, Result};

/// Auto mode iterates in the standard domain only while `max C / eps` stays
/// below this; beyond it the kernel is badly conditioned even when it does
/// not underflow.
pub const STANDARD_MAX_COST_RATIO: f64 = 30.0;
/// Standard-domain budget in Auto mode before handing over to the log domain.
const STANDARD_STALL_ITERS: usize = 1000;
/// Ratio between consecutive regularizations of the ε-scaling path.
const ANNEAL_FACTOR: f64 = 2.0;
const ANNEAL_LEVEL_TOL: f64 = 1e-3;
const ANNEAL_LEVEL_ITERS: usize = 20;
/// Plain log-domain updates attempted before switching to Newton steps.
const NEWTON_AFTER: usize = 20;
const NEWTON_MAX_HALVINGS: usize = 40;
/// Relative ridge added to the Newton system.
const NEWTON_RIDGE: f64 = 1e-12;
/// Plain updates run after a rejected Newton step.
const NEWTON_RETRY_BURST: usize = 20;

/// Which representation of the Gibbs kernel the solver iterates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelDomain {
    /// Standard scaling for well-conditioned kernels; the ε-scaled log-domain
    /// path when `max C / eps` is large (which covers every underflowing
    /// kernel) or the standard scalings overflow.
    #[default]
    Auto,
    Standard,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub domain: KernelDomain,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 10_000,
            domain: KernelDomain::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SinkhornStats {
    pub iterations: usize,
    pub residual: f64,
    pub log_domain: bool,
}

/// Entropic OT plan `diag(u)·exp(-C/eps)·diag(v)` between `mu` and `nu`.
///
/// Iterates `u = μ / Kv`, `v = ν / Kᵀu` until the sup-norm marginal error drops
/// below `cfg.tol`. The returned plan's marginal residual is re-measured on the
/// materialized matrix.
pub fn sinkhorn_plan(
    cost: &CostMatrix,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    epsilon: f64,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornStats)> {
    let n = cost.n();
    check_marginals(n, mu, nu)?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sinkhorn needs a finite epsilon > 0, got {epsilon}"
        )));
    }

    let ratio = cost.max() / epsilon;
    let use_log = match cfg.domain {
        KernelDomain::Log => true,
        KernelDomain::Auto => ratio > STANDARD_MAX_COST_RATIO,
        KernelDomain::Standard => false,
    };

    let auto = cfg.domain == KernelDomain::Auto;
    let mut spent = 0;
    if !use_log {
        let kernel = cost.values().mapv(|c| (-c / epsilon).exp());
        let budget = if auto { cfg.max_iter.min(STANDARD_STALL_ITERS) } else { cfg.max_iter };
        let standard_cfg = SinkhornConfig { max_iter: budget, ..*cfg };
        match scale_standard(&kernel, mu, nu, &standard_cfg, epsilon) {
            Ok(out) => return Ok(out),
            // Overflowing scalings can happen without any kernel entry
            // underflowing; retry in the log domain.
            Err(Error::NonFinite(_)) if auto => {}
            // Clustered marginals make plain scaling crawl; finish with Newton.
            Err(Error::SinkhornNotConverged { iterations, .. }) if auto && iterations < cfg.max_iter => {
                spent = iterations;
            }
            Err(e) => return Err(e),
        }
    }
    let log_cfg = SinkhornConfig {
        max_iter: cfg.max_iter - spent,
        ..*cfg
    };
    match scale_log_annealed(cost.values(), mu, nu, epsilon, &log_cfg) {
        Ok((plan, mut stats)) => {
            stats.iterations += spent;
            Ok((plan, stats))
        }
        Err(Error::SinkhornNotConverged { iterations, residual }) => Err(Error::SinkhornNotConverged {
            iterations: iterations + spent,
            residual,
        }),
        Err(e) => Err(e),
    }
}

fn check_marginals(n: usize, mu: ArrayView1<'_, f64>, nu: ArrayView1<'_, f64>) -> Result<()> {
    ensure_len("row marginal", n, mu.len())?;
    ensure_len("column marginal", n, nu.len())?;
    for (name, m) in [("mu", mu), ("nu", nu)] {
        if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative")));
        }
        let total: f64 = m.sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("{name} sums to {total}, expected 1")));
        }
    }
    Ok(())
}

fn safe_div(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn scale_standard(
    kernel: &Array2<f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
    epsilon: f64,
) -> Result<(TransportPlan, SinkhornStats)> {
    let n = kernel.nrows();
    for (i, row) in kernel.rows().into_iter().enumerate() {
        if mu[i] > 0.0 && row.iter().all(|&k| k == 0.0) {
            return Err(Error::KernelUnderflow { axis: "row", index: i, epsilon });
        }
    }
    for (j, col) in kernel.columns().into_iter().enumerate() {
        if nu[j] > 0.0 && col.iter().all(|&k| k == 0.0) {
            return Err(Error::KernelUnderflow { axis: "column", index: j, epsilon });
        }
    }

    let mut u = Array1::from_elem(n, 1.0 / n as f64);
    let mut v = Array1::from_elem(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        // Column sums are exact after every v update, so only rows need checking.
        let kv = kernel.dot(&v);
        if iterations > 0 {
            residual = mu
                .iter()
                .zip(u.iter().zip(kv.iter()))
                .map(|(m, (ui, kvi))| (m - ui * kvi).abs())
                .fold(0.0, f64::max);
            if residual < cfg.tol {
                break;
            }
        }
        u = Array1::from_shape_fn(n, |i| safe_div(mu[i], kv[i]));
        let ktu = kernel.t().dot(&u);
        v = Array1::from_shape_fn(n, |j| safe_div(nu[j], ktu[j]));
        if !u.iter().chain(v.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFinite("sinkhorn scalings"));
        }
        iterations += 1;
    }

    let values = Array2::from_shape_fn((n, n), |(i, j)| u[i] * kernel[[i, j]] * v[j]);
    finish(values, mu, nu, iterations, false, residual, cfg)
}

/// Log-domain Sinkhorn on an arbitrary log-kernel (`-C/eps` for entropic OT,
/// a log-density for the closed-form plan). The kernel is treated as the
/// cost `max(log K) − log K` at unit regularization.
pub(crate) fn scale_log_kernel(
    log_kernel: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornStats)> {
    check_marginals(log_kernel.nrows(), mu, nu)?;
    let top = log_kernel.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() || log_kernel.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("log-kernel"));
    }
    let cost = log_kernel.mapv(|v| top - v);
    scale_log_annealed(cost.view(), mu, nu, 1.0, cfg)
}

/// Log-domain Sinkhorn with ε-scaling: potentials are solved for a geometric
/// sequence of regularizations from `max C` down to `epsilon`, each warm
/// started from the previous one. Only the final level must meet `cfg.tol`;
/// `cfg.max_iter` bounds the iterations summed over all levels.
fn scale_log_annealed(
    cost: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    epsilon: f64,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornStats)> {
    let n = cost.nrows();
    let max_cost = cost.iter().copied().fold(0.0, f64::max);
    let mut levels = vec![epsilon];
    let mut e = epsilon;
    while e * ANNEAL_FACTOR < max_cost {
        e *= ANNEAL_FACTOR;
        levels.push(e);
    }
    levels.reverse();

    // Potentials in cost units: plan entries are exp((a_i + b_j - C_ij) / eps).
    let mut a = Array1::<f64>::zeros(n);
    let mut b = Array1::<f64>::zeros(n);
    let mut total = 0;
    let last = levels.len() - 1;
    for (level, &eps) in levels.iter().enumerate() {
        let log_kernel = cost.mapv(|c| -c / eps);
        let mut f = a.mapv(|v| v / eps);
        let mut g = b.mapv(|v| v / eps);
        let remaining = cfg.max_iter - total;
        let (iterations, residual) = if level == last {
            solve_potentials(log_kernel.view(), mu, nu, &mut f, &mut g, cfg.tol, remaining)?
        } else {
            log_iterate(
                log_kernel.view(),
                mu,
                nu,
                &mut f,
                &mut g,
                ANNEAL_LEVEL_TOL,
                ANNEAL_LEVEL_ITERS.min(remaining),
            )?
        };
        total += iterations;
        if level == last {
            let values = log_plan(log_kernel.view(), &f, &g);
            return finish(values, mu, nu, total, true, residual, cfg);
        }
        a = f.mapv(|v| v * eps);
        b = g.mapv(|v| v * eps);
    }
    unreachable!("levels always contain the target epsilon")
}

/// Log-domain Sinkhorn updates, then Newton steps on the row potentials once
/// plain scaling has had `NEWTON_AFTER` updates without meeting `tol`. Every
/// Newton step counts as one iteration against `max_iter`.
fn solve_potentials(
    log_kernel: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let (iterations, residual) = log_iterate(log_kernel, mu, nu, f, g, tol, NEWTON_AFTER.min(max_iter))?;
    let positive = mu.iter().chain(nu.iter()).all(|&m| m > 0.0);
    if residual < tol || iterations >= max_iter || !positive {
        if residual < tol || iterations >= max_iter {
            return Ok((iterations, residual));
        }
        let (more, residual) = log_iterate(log_kernel, mu, nu, f, g, tol, max_iter - iterations)?;
        return Ok((iterations + more, residual));
    }
    let (more, residual) = newton_polish(log_kernel, mu, nu, f, g, tol, max_iter - iterations)?;
    Ok((iterations + more, residual))
}

/// Fits `g` so column sums equal `nu` exactly; returns the plan and its row sums.
fn fit_columns(
    log_kernel: ArrayView2<'_, f64>,
    nu: ArrayView1<'_, f64>,
    f: &Array1<f64>,
    g: &mut Array1<f64>,
) -> (Array2<f64>, Array1<f64>) {
    for j in 0..g.len() {
        let lse = logsumexp(log_kernel.column(j).iter().zip(f.iter()).map(|(k, fi)| k + fi));
        g[j] = nu[j].ln() - lse;
    }
    let plan = log_plan(log_kernel, f, g);
    let rows = plan.sum_axis(Axis(1));
    (plan, rows)
}

fn sup_distance(a: ArrayView1<'_, f64>, b: &Array1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Newton iteration on the row potentials with columns kept exact.
///
/// The linearized row-sum map is the graph Laplacian `diag(r) − Π diag(ν)⁻¹ Πᵀ`.
/// It is singular along the constant vector, which `11ᵀ` removes since the
/// right-hand side sums to zero, and nearly singular when the plan splits
/// into weakly coupled blocks, which a small ridge tames. Steps are halved
/// until the row residual decreases; when no step helps, a burst of plain
/// scaling runs before Newton is retried.
fn newton_polish(
    log_kernel: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let n = f.len();
    let (mut plan, mut rows) = fit_columns(log_kernel, nu, f, g);
    let mut residual = sup_distance(mu, &rows);
    let mut iterations = 0;
    while residual >= tol && iterations < max_iter {
        iterations += 1;
        let scaled = &plan / &nu.insert_axis(Axis(0));
        let coupled = scaled.dot(&plan.t());
        let ridge = NEWTON_RIDGE * rows.iter().copied().fold(0.0, f64::max);
        let jac = DMatrix::from_fn(n, n, |i, k| {
            let diag = if i == k { rows[i] + ridge } else { 0.0 };
            diag - coupled[[i, k]] + 1.0
        });
        let rhs = DVector::from_iterator(n, (0..n).map(|i| mu[i] - rows[i]));
        let step = match jac.clone().cholesky() {
            Some(chol) => Some(chol.solve(&rhs)),
            None => jac.lu().solve(&rhs),
        }
        .filter(|s| s.iter().all(|v| v.is_finite()));

        let mut accepted = false;
        if let Some(step) = step {
            let mut t = 1.0;
            for _ in 0..NEWTON_MAX_HALVINGS {
                let trial_f = Array1::from_shape_fn(n, |i| f[i] + t * step[i]);
                let mut trial_g = g.clone();
                let (trial_plan, trial_rows) = fit_columns(log_kernel, nu, &trial_f, &mut trial_g);
                let trial_residual = sup_distance(mu, &trial_rows);
                if trial_residual < residual {
                    *f = trial_f;
                    *g = trial_g;
                    plan = trial_plan;
                    rows = trial_rows;
                    residual = trial_residual;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
        }
        if !accepted {
            let burst = NEWTON_RETRY_BURST.min(max_iter - iterations);
            let (more, r) = log_iterate(log_kernel, mu, nu, f, g, tol, burst)?;
            iterations += more;
            if r < tol || iterations >= max_iter {
                return Ok((iterations, r));
            }
            (plan, rows) = fit_columns(log_kernel, nu, f, g);
            residual = sup_distance(mu, &rows);
        }
    }
    Ok((iterations, residual))
}

/// Alternating log-domain updates on potentials `f`, `g` until the row
/// residual drops below `tol` or `max_iter` updates have run.
fn log_iterate(
    log_kernel: ArrayView2<'_, f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    f: &mut Array1<f64>,
    g: &mut Array1<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(usize, f64)> {
    let n = log_kernel.nrows();
    let log_mu = mu.mapv(f64::ln);
    let log_nu = nu.mapv(f64::ln);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut first = true;
    loop {
        let row_lse = Array1::from_shape_fn(n, |i| {
            logsumexp(log_kernel.row(i).iter().zip(g.iter()).map(|(k, gj)| k + gj))
        });
        // Before the first update the potentials may be arbitrary (cold start),
        // so the residual is only meaningful once g has been fitted.
        if !first {
            residual = (0..n)
                .map(|i| (mu[i] - (f[i] + row_lse[i]).exp()).abs())
                .fold(0.0, f64::max);
            if residual < tol {
                break;
            }
        }
        if iterations >= max_iter {
            break;
        }
        first = false;
        for i in 0..n {
            f[i] = if mu[i] == 0.0 { f64::NEG_INFINITY } else { log_mu[i] - row_lse[i] };
        }
        for j in 0..n {
            let lse = logsumexp(log_kernel.column(j).iter().zip(f.iter()).map(|(k, fi)| k + fi));
            g[j] = if nu[j] == 0.0 { f64::NEG_INFINITY } else { log_nu[j] - lse };
        }
        if f.iter().chain(g.iter()).any(|x| x.is_nan() || *x == f64::INFINITY) {
            return Err(Error::NonFinite("log-domain sinkhorn potentials"));
        }
        iterations += 1;
    }
    Ok((iterations, residual))
}

fn log_plan(log_kernel: ArrayView2<'_, f64>, f: &Array1<f64>, g: &Array1<f64>) -> Array2<f64> {
    let n = log_kernel.nrows();
    Array2::from_shape_fn((n, n), |(i, j)| {
        let e = f[i] + log_kernel[[i, j]] + g[j];
        if e == f64::NEG_INFINITY || e.is_nan() {
            0.0
        } else {
            e.exp()
        }
    })
}

fn finish(
    values: Array2<f64>,
    mu: ArrayView1<'_, f64>,
    nu: ArrayView1<'_, f64>,
    iterations: usize,
    log_domain: bool,
    loop_residual: f64,
    cfg: &SinkhornConfig,
) -> Result<(TransportPlan, SinkhornStats)> {
    let plan = TransportPlan::new(values, mu.to_owned(), nu.to_owned())?;
    let residual = plan.marginal_residual();
    if !(residual < cfg.tol) {
        return Err(Error::SinkhornNotConverged {
            iterations,
            residual: if loop_residual.is_finite() { loop_residual.max(residual) } else { residual },
        });
    }
    Ok((
        plan,
        SinkhornStats {
            iterations,
            residual,
            log_domain,
        },
    ))
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
