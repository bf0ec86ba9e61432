//! Calibrated Gaussian noise on a subset of gradient rows.
//!
//! `σ` is the population standard deviation over all entries of the clean
//! matrix. A noise level `m` asks for the perturbed matrix to reach
//! `σ′ = (1 + m)·σ`; the noise scale is found by bisection against a fixed
//! draw, so the result is a deterministic function of the calibration seed.

use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ewr::GradientMatrix;
use crate::rng::seeded;

/// Relative accuracy the calibration loop aims for (well inside the 1% contract).
const CALIBRATION_REL_TOL: f64 = 1e-10;
const MAX_SCALE_FACTOR: f64 = 1e12;
/// Std below this multiple of the largest magnitude counts as zero.
const CONSTANT_STD_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Share of rows receiving noise, in `[0, 1]`.
    pub fraction: f64,
    /// Target multiplier `m` in `σ′ = (1 + m)σ`.
    pub level: f64,
    pub cal_seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            fraction: 0.0,
            level: 1.0,
            cal_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::InvalidArgument(format!(
                "noise fraction must be in [0, 1], got {}",
                self.fraction
            )));
        }
        if !(self.level > 0.0) || !self.level.is_finite() {
            return Err(Error::InvalidArgument(format!("noise level must be > 0, got {}", self.level)));
        }
        Ok(())
    }

    pub fn is_active(&self) -> bool {
        self.fraction > 0.0
    }
}

fn population_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (count, sum) = values.clone().fold((0usize, 0.0), |(c, s), v| (c + 1, s + v));
    let mean = sum / count as f64;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64;
    var.sqrt()
}

pub fn matrix_std(g: &GradientMatrix) -> f64 {
    population_std(g.values().iter().copied())
}

/// Result of [`inject_noise_with_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseReport {
    pub noisy_rows: Vec<usize>,
    pub scale: f64,
    pub clean_std: f64,
    pub achieved_std: f64,
}

pub fn inject_noise(g: &GradientMatrix, spec: &NoiseSpec) -> Result<GradientMatrix> {
    inject_noise_with_report(g, spec).map(|(m, _)| m)
}

pub fn inject_noise_with_report(g: &GradientMatrix, spec: &NoiseSpec) -> Result<(GradientMatrix, NoiseReport)> {
    spec.validate()?;
    let sigma = matrix_std(g);
    if !spec.is_active() {
        return Ok((
            g.clone(),
            NoiseReport {
                noisy_rows: Vec::new(),
                scale: 0.0,
                clean_std: sigma,
                achieved_std: sigma,
            },
        ));
    }
    // Rounding alone leaves a constant matrix with a std of a few ulps.
    let max_abs = g.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(sigma > CONSTANT_STD_RTOL * max_abs) {
        return Err(Error::ZeroGradientStd);
    }
    let (n, p) = (g.n(), g.p());
    let target = (1.0 + spec.level) * sigma;
    let count = (spec.fraction * n as f64).floor() as usize;

    let mut rng = seeded(spec.cal_seed);
    let mut rows = index::sample(&mut rng, n, count).into_vec();
    rows.sort_unstable();
    let mut draw = Array2::<f64>::zeros((n, p));
    for &r in &rows {
        for v in draw.row_mut(r).iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }

    let base = g.values();
    let std_at = |s: f64| population_std(base.iter().zip(draw.iter()).map(move |(a, z)| a + s * z));

    let limit = MAX_SCALE_FACTOR * sigma;
    let mut hi = sigma;
    while std_at(hi) < target {
        if hi >= limit {
            return Err(Error::NoiseCalibration {
                target,
                achievable: std_at(limit),
            });
        }
        hi = (hi * 2.0).min(limit);
    }
    let mut lo = 0.0;
    let mut scale = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let s = std_at(mid);
        scale = mid;
        if (s - target).abs() <= CALIBRATION_REL_TOL * target {
            break;
        }
        if s < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let noisy = &base + &(&draw * scale);
    let out = GradientMatrix::new(noisy)?;
    let achieved = matrix_std(&out);
    Ok((
        out,
        NoiseReport {
            noisy_rows: rows,
            scale,
            clean_std: sigma,
            achieved_std: achieved,
        },
    ))
}
