use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    #[serde(alias = "exp")]
    Exponential,
    Linear,
    /// Explicit counts supplied by the caller.
    Custom,
}

/// Non-increasing nonzero targets `k_0 ≥ … ≥ k_T`, one per pruning stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    kind: ScheduleKind,
    /// Scheduled sparsity fraction of each stage.
    fractions: Vec<f64>,
    counts: Vec<usize>,
    num_params: usize,
}

fn check_fractions(k0: f64, kt: f64, stages: usize) -> Result<()> {
    if !(0.0..=1.0).contains(&k0) || !(0.0..=1.0).contains(&kt) {
        return Err(Error::InvalidArgument(format!(
            "sparsity fractions must lie in [0, 1], got k0={k0} kT={kt}"
        )));
    }
    if k0 > kt {
        return Err(Error::InvalidArgument(format!("initial sparsity {k0} exceeds target {kt}")));
    }
    if stages == 0 {
        return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
    }
    Ok(())
}

/// Half-up rounding of `(1 − fraction)·p`, then clamped so counts never increase.
fn to_counts(fractions: &[f64], p: usize) -> Vec<usize> {
    let mut counts: Vec<usize> = fractions
        .iter()
        .map(|f| (((1.0 - f) * p as f64) + 0.5).floor().clamp(0.0, p as f64) as usize)
        .collect();
    for t in 1..counts.len() {
        counts[t] = counts[t].min(counts[t - 1]);
    }
    counts
}

impl SparsitySchedule {
    /// Cubic schedule: `s_t = s_T + (s_0 − s_T)(1 − t/T)³`.
    pub fn exponential(k0: f64, kt: f64, stages: usize, p: usize) -> Result<Self> {
        check_fractions(k0, kt, stages)?;
        let fractions: Vec<f64> = (0..=stages)
            .map(|t| {
                let r = 1.0 - t as f64 / stages as f64;
                kt + (k0 - kt) * r * r * r
            })
            .collect();
        Ok(Self {
            kind: ScheduleKind::Exponential,
            counts: to_counts(&fractions, p),
            fractions,
            num_params: p,
        })
    }

    /// Equal sparsity increments from `k0` to `kt`.
    pub fn linear(k0: f64, kt: f64, stages: usize, p: usize) -> Result<Self> {
        check_fractions(k0, kt, stages)?;
        let fractions: Vec<f64> = (0..=stages)
            .map(|t| k0 + (kt - k0) * t as f64 / stages as f64)
            .collect();
        Ok(Self {
            kind: ScheduleKind::Linear,
            counts: to_counts(&fractions, p),
            fractions,
            num_params: p,
        })
    }

    pub fn from_counts(counts: Vec<usize>, p: usize) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidArgument("schedule needs at least one stage".into()));
        }
        if counts.iter().any(|&k| k > p) {
            return Err(Error::InvalidArgument(format!("stage count exceeds parameter count {p}")));
        }
        if counts.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidArgument("stage counts must be non-increasing".into()));
        }
        let fractions = counts.iter().map(|&k| 1.0 - k as f64 / p as f64).collect();
        Ok(Self {
            kind: ScheduleKind::Custom,
            fractions,
            counts,
            num_params: p,
        })
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_params(&self) -> usize {
        self.num_params
    }

    /// Number of stages, `T + 1`.
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn final_count(&self) -> usize {
        *self.counts.last().expect("nonempty schedule")
    }
}

/// A schedule described by fractions, resolved once the parameter count is known.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub initial: f64,
    pub target: f64,
    pub stages: usize,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Exponential,
            initial: 0.0,
            target: 0.95,
            stages: 10,
        }
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kind == ScheduleKind::Custom {
            return Err(Error::InvalidArgument("a schedule spec must be exponential or linear".into()));
        }
        check_fractions(self.initial, self.target, self.stages)
    }

    pub fn build(&self, p: usize) -> Result<SparsitySchedule> {
        match self.kind {
            ScheduleKind::Exponential => SparsitySchedule::exponential(self.initial, self.target, self.stages, p),
            ScheduleKind::Linear => SparsitySchedule::linear(self.initial, self.target, self.stages, p),
            ScheduleKind::Custom => self.validate().map(|_| unreachable!()),
        }
    }
}
