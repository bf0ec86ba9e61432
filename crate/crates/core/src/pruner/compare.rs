//! LR-vs-EWR comparison runs and ε sweeps over seeds, with Student-t
//! aggregation and a one-sided sign test.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, StudentsT};

use super::{swap_prune, PreparedTask, ScheduleSpec, TaskSpec};
use crate::error::{Error, Result};
use crate::ewr::{EwrConfig, PlanSolver};

pub const DEFAULT_CONFIDENCE: f64 = 0.9;

/// Formula used for every relative difference in reports.
pub const DIFF_FORMULA: &str = "diff_percent = 100 * (lr_loss - ewr_loss) / lr_loss";

/// `100·(lr − ewr)/lr`, or 0 when `lr` is not positive.
pub fn diff_percent(lr: f64, ewr: f64) -> f64 {
    if lr > 0.0 {
        100.0 * (lr - ewr) / lr
    } else {
        0.0
    }
}

/// Mean and Student-t confidence half-width. The half-width is `None` for
/// fewer than two values.
pub fn mean_ci(values: &[f64], level: f64) -> (f64, Option<f64>) {
    let m = values.len();
    let mean = values.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (m - 1) as f64)
        .expect("degrees of freedom >= 1")
        .inverse_cdf(0.5 + level / 2.0);
    (mean, Some(t * (var / m as f64).sqrt()))
}

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips.
pub fn sign_test_p_value(wins: usize, trials: usize) -> f64 {
    if wins == 0 || trials == 0 {
        return 1.0;
    }
    let b = Binomial::new(0.5, trials as u64).expect("valid binomial");
    b.sf(wins as u64 - 1)
}

/// Test metrics of one pipeline at one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub sparsity: f64,
    pub loss: f64,
    pub accuracy: f64,
}

/// Runs every configuration on one seed, sharing the prepared task, batches
/// and noise. Returns per-config, per-stage outcomes.
pub fn run_seed(
    task: &TaskSpec,
    schedule: &ScheduleSpec,
    cfgs: &[EwrConfig],
    seed: u64,
) -> Result<Vec<Vec<StageOutcome>>> {
    let prepared = PreparedTask::prepare(task, seed)?;
    let sched = schedule.build(prepared.num_params())?;
    let wbar = prepared.model.weights().clone();
    cfgs.iter()
        .map(|cfg| {
            let mut source = prepared.gradient_source();
            let out = swap_prune(&mut source, &wbar, &sched, cfg)?;
            Ok(out
                .stages
                .iter()
                .map(|s| {
                    let e = s.eval.expect("task sources always evaluate");
                    StageOutcome {
                        sparsity: s.scheduled_sparsity,
                        loss: e.test_loss,
                        accuracy: e.accuracy,
                    }
                })
                .collect())
        })
        .collect()
}

/// Runs seeds in parallel. Results come back in seed order; failures are
/// kept per seed.
fn run_seeds(
    task: &TaskSpec,
    schedule: &ScheduleSpec,
    cfgs: &[EwrConfig],
    seeds: &[u64],
) -> Vec<(u64, Result<Vec<Vec<StageOutcome>>>)> {
    seeds
        .par_iter()
        .map(|&seed| {
            let r = run_seed(task, schedule, cfgs, seed).map_err(|e| Error::Seed {
                seed,
                source: Box::new(e),
            });
            (seed, r)
        })
        .collect()
}

fn check_common(task: &TaskSpec, schedule: &ScheduleSpec, seeds: &[u64], confidence: f64) -> Result<()> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("seed list is empty".into()));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!("confidence must be in (0, 1), got {confidence}")));
    }
    task.validate()?;
    schedule.validate()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub stage: usize,
    pub sparsity: f64,
    pub lr_loss: f64,
    pub ewr_loss: f64,
    pub diff_percent: f64,
    pub lr_acc: f64,
    pub ewr_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sparsity: f64,
    pub lr_loss: f64,
    pub lr_ci: Option<f64>,
    pub ewr_loss: f64,
    pub ewr_ci: Option<f64>,
    /// Relative difference of the mean losses.
    pub diff_percent: f64,
    pub lr_acc: f64,
    pub ewr_acc: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub formula: String,
    pub confidence: f64,
    pub rows: Vec<SeedRow>,
    pub aggregates: Vec<AggregateRow>,
    pub failures: Vec<SeedFailure>,
}

impl CompareReport {
    /// Per-seed rows of stage `stage`, in seed order.
    pub fn stage_rows(&self, stage: usize) -> Vec<&SeedRow> {
        self.rows.iter().filter(|r| r.stage == stage).collect()
    }

    /// `(wins, trials)` of EWR over LR at `stage`; ties are dropped.
    pub fn wins(&self, stage: usize) -> (usize, usize) {
        let rows = self.stage_rows(stage);
        let wins = rows.iter().filter(|r| r.ewr_loss < r.lr_loss).count();
        let losses = rows.iter().filter(|r| r.ewr_loss > r.lr_loss).count();
        (wins, wins + losses)
    }

    pub fn sign_test(&self, stage: usize) -> f64 {
        let (w, n) = self.wins(stage);
        sign_test_p_value(w, n)
    }

    /// Mean of the per-seed relative differences at `stage`.
    pub fn mean_seed_diff(&self, stage: usize) -> f64 {
        let rows = self.stage_rows(stage);
        rows.iter().map(|r| r.diff_percent).sum::<f64>() / rows.len() as f64
    }
}

/// Runs the LR and EWR pipelines on identical tasks, batches and noise for
/// every seed and aggregates test metrics per scheduled sparsity.
pub fn compare_lr_ewr(
    task: &TaskSpec,
    schedule: &ScheduleSpec,
    lr: &EwrConfig,
    ewr: &EwrConfig,
    seeds: &[u64],
    confidence: f64,
) -> Result<CompareReport> {
    check_common(task, schedule, seeds, confidence)?;
    lr.validate()?;
    ewr.validate()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in run_seeds(task, schedule, &[lr.clone(), ewr.clone()], seeds) {
        match result {
            Ok(runs) => {
                for (stage, (a, b)) in runs[0].iter().zip(&runs[1]).enumerate() {
                    rows.push(SeedRow {
                        seed,
                        stage,
                        sparsity: a.sparsity,
                        lr_loss: a.loss,
                        ewr_loss: b.loss,
                        diff_percent: diff_percent(a.loss, b.loss),
                        lr_acc: a.accuracy,
                        ewr_acc: b.accuracy,
                    });
                }
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    let stages = rows.iter().map(|r| r.stage + 1).max().unwrap_or(0);
    let aggregates = (0..stages)
        .map(|t| {
            let sel: Vec<&SeedRow> = rows.iter().filter(|r| r.stage == t).collect();
            let col = |f: fn(&SeedRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let (lr_loss, lr_ci) = mean_ci(&col(|r| r.lr_loss), confidence);
            let (ewr_loss, ewr_ci) = mean_ci(&col(|r| r.ewr_loss), confidence);
            let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
            AggregateRow {
                sparsity: sel[0].sparsity,
                lr_loss,
                lr_ci,
                ewr_loss,
                ewr_ci,
                diff_percent: diff_percent(lr_loss, ewr_loss),
                lr_acc: mean(col(|r| r.lr_acc)),
                ewr_acc: mean(col(|r| r.ewr_acc)),
                seeds: sel.len(),
            }
        })
        .collect();
    Ok(CompareReport {
        formula: DIFF_FORMULA.to_string(),
        confidence,
        rows,
        aggregates,
        failures,
    })
}

/// One ε of a sweep. `Finite(0)` maps to the diagonal plan and `Infinite` to
/// the uniform plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EpsilonSetting {
    Finite(f64),
    Infinite,
}

impl EpsilonSetting {
    /// Parses a number or the token `inf`.
    pub fn parse(token: &str) -> Result<Self> {
        let t = token.trim();
        if t.eq_ignore_ascii_case("inf") {
            return Ok(EpsilonSetting::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("epsilon must be a number >= 0 or \"inf\", got {t:?}")))?;
        if !(v >= 0.0) || v.is_infinite() {
            return Err(Error::InvalidArgument(format!("epsilon must be a number >= 0 or \"inf\", got {t:?}")));
        }
        Ok(EpsilonSetting::Finite(v))
    }

    pub fn label(&self) -> String {
        match self {
            EpsilonSetting::Finite(v) => format!("{v}"),
            EpsilonSetting::Infinite => "inf".to_string(),
        }
    }

    /// `base` with the plan solver and ε this setting selects.
    pub fn config(&self, base: &EwrConfig) -> EwrConfig {
        match *self {
            EpsilonSetting::Finite(v) if v == 0.0 => EwrConfig {
                epsilon: 0.0,
                plan_solver: PlanSolver::Diagonal,
                ..base.clone()
            },
            EpsilonSetting::Finite(v) => EwrConfig {
                epsilon: v,
                plan_solver: if base.plan_solver.needs_epsilon() {
                    base.plan_solver
                } else {
                    PlanSolver::Sinkhorn
                },
                ..base.clone()
            },
            EpsilonSetting::Infinite => EwrConfig {
                plan_solver: PlanSolver::Uniform,
                ..base.clone()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeedRow {
    pub epsilon: String,
    pub seed: u64,
    pub stage: usize,
    pub sparsity: f64,
    pub ewr_loss: f64,
    pub ewr_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: String,
    pub sparsity: f64,
    pub ewr_loss: f64,
    pub ci: Option<f64>,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub confidence: f64,
    pub rows: Vec<SweepRow>,
    pub seed_rows: Vec<SweepSeedRow>,
    pub failures: Vec<SeedFailure>,
}

impl SweepReport {
    /// Per-seed loss at `stage` for the setting labelled `epsilon`, in seed order.
    pub fn losses(&self, epsilon: &str, stage: usize) -> Vec<(u64, f64)> {
        self.seed_rows
            .iter()
            .filter(|r| r.epsilon == epsilon && r.stage == stage)
            .map(|r| (r.seed, r.ewr_loss))
            .collect()
    }
}

/// One EWR run per ε setting on shared seeds, batches and noise.
pub fn sweep_epsilon(
    task: &TaskSpec,
    schedule: &ScheduleSpec,
    base: &EwrConfig,
    epsilons: &[EpsilonSetting],
    seeds: &[u64],
    confidence: f64,
) -> Result<SweepReport> {
    check_common(task, schedule, seeds, confidence)?;
    if epsilons.is_empty() {
        return Err(Error::InvalidArgument("epsilon list is empty".into()));
    }
    let cfgs: Vec<EwrConfig> = epsilons.iter().map(|e| e.config(base)).collect();
    for c in &cfgs {
        c.validate()?;
    }
    let labels: Vec<String> = epsilons.iter().map(EpsilonSetting::label).collect();
    let mut seed_rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in run_seeds(task, schedule, &cfgs, seeds) {
        match result {
            Ok(runs) => {
                for (label, run) in labels.iter().zip(&runs) {
                    for (stage, o) in run.iter().enumerate() {
                        seed_rows.push(SweepSeedRow {
                            epsilon: label.clone(),
                            seed,
                            stage,
                            sparsity: o.sparsity,
                            ewr_loss: o.loss,
                            ewr_acc: o.accuracy,
                        });
                    }
                }
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    let stages = seed_rows.iter().map(|r| r.stage + 1).max().unwrap_or(0);
    let mut rows = Vec::new();
    for label in &labels {
        for t in 0..stages {
            let sel: Vec<&SweepSeedRow> = seed_rows
                .iter()
                .filter(|r| &r.epsilon == label && r.stage == t)
                .collect();
            let losses: Vec<f64> = sel.iter().map(|r| r.ewr_loss).collect();
            let (ewr_loss, ci) = mean_ci(&losses, confidence);
            rows.push(SweepRow {
                epsilon: label.clone(),
                sparsity: sel[0].sparsity,
                ewr_loss,
                ci,
                seeds: sel.len(),
            });
        }
    }
    Ok(SweepReport {
        confidence,
        rows,
        seed_rows,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diff_formula_example() {
        assert!((diff_percent(2.86, 2.74) - 4.195804195804).abs() < 1e-9);
        assert_eq!(diff_percent(0.0, 1.0), 0.0);
    }

    #[test]
    fn student_t_half_width() {
        // t_{0.95, 2} = 2.919986; s = 1, m = 3.
        let (m, ci) = mean_ci(&[1.0, 2.0, 3.0], 0.9);
        assert_eq!(m, 2.0);
        assert!((ci.unwrap() - 2.919986 / 3f64.sqrt()).abs() < 1e-5);
        assert_eq!(mean_ci(&[4.0], 0.9), (4.0, None));
    }

    #[test]
    fn sign_test_values() {
        // P(X ≥ 15 | n = 20) = 21700 / 2^20.
        assert!((sign_test_p_value(15, 20) - 21700.0 / 1048576.0).abs() < 1e-12);
        assert!(sign_test_p_value(14, 20) > 0.05);
        assert_eq!(sign_test_p_value(0, 20), 1.0);
        assert!((sign_test_p_value(3, 3) - 0.125).abs() < 1e-12);
    }

    #[test]
    fn epsilon_tokens() {
        assert_eq!(EpsilonSetting::parse("inf").unwrap(), EpsilonSetting::Infinite);
        assert_eq!(EpsilonSetting::parse(" 2.5 ").unwrap(), EpsilonSetting::Finite(2.5));
        assert!(EpsilonSetting::parse("-1").is_err());
        assert!(EpsilonSetting::parse("abc").is_err());
        let base = EwrConfig::default();
        assert_eq!(EpsilonSetting::Finite(0.0).config(&base).plan_solver, PlanSolver::Diagonal);
        assert_eq!(EpsilonSetting::Infinite.config(&base).plan_solver, PlanSolver::Uniform);
        assert_eq!(EpsilonSetting::Finite(1.0).config(&base).plan_solver, PlanSolver::Sinkhorn);
    }

    #[test]
    fn empty_seed_list_rejected() {
        let r = compare_lr_ewr(
            &TaskSpec::default(),
            &ScheduleSpec::default(),
            &EwrConfig::least_squares(0.01),
            &EwrConfig::default(),
            &[],
            0.9,
        );
        assert!(r.is_err());
    }
}
