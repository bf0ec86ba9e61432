//! Subcommand bodies. Each writes its files into `cfg.out` and reports how
//! many seeds or instances failed.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use swap_core::ewr::{GradientMatrix, WeightVector};
use swap_core::model::TinyMlp;
use swap_core::ot::{hull_equality_witness, ConvexWeights};
use swap_core::pruner::{
    compare_lr_ewr, swap_prune, sweep_epsilon, GradientSource, PreparedTask, PruneResult, SeedFailure, SeedPlan,
    StageEval,
};
use swap_core::rng::{derive_seed, seeded};

use crate::config::{ReportFormat, RunConfig};
use crate::error::{io_err, Result};
use crate::matrix_io::encode_matrix;
use crate::report::{
    compare_seed_table, compare_table, fmt_num, prune_table, sweep_seed_table, sweep_table, write_errors, write_json,
    Table,
};
use crate::weights::{read_weights, write_weights};

/// What a command produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub failures: usize,
    /// Human-readable lines for standard output.
    pub summary: Vec<String>,
}

impl Outcome {
    fn file(&mut self, path: PathBuf) -> &Path {
        self.files.push(path);
        self.files.last().expect("just pushed")
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.out).map_err(io_err(&cfg.out))?;
    let mut outcome = Outcome::default();
    let path = outcome.file(cfg.out.join("config.json")).to_path_buf();
    fs::write(&path, cfg.to_json() + "\n").map_err(io_err(&path))?;
    Ok(outcome)
}

fn record_failures(cfg: &RunConfig, outcome: &mut Outcome, failures: &[SeedFailure]) -> Result<()> {
    outcome.failures = failures.len();
    if let Some(path) = write_errors(&cfg.out, failures)? {
        outcome.summary.push(format!("{} failure(s), see {}", failures.len(), path.display()));
        outcome.files.push(path);
    }
    Ok(())
}

fn eval_line(label: &str, e: &StageEval) -> String {
    format!(
        "{label}: test loss {} accuracy {} train loss {}",
        fmt_num(e.test_loss),
        fmt_num(e.accuracy),
        fmt_num(e.train_loss)
    )
}

/// Writes the dataset of the first seed as CSV.
pub fn gen_data(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let seed = cfg.seeds[0];
    let data = cfg.task.data.load(SeedPlan::from_run(seed).data)?;
    let path = outcome.file(cfg.out.join("data.csv")).to_path_buf();
    swap_core::model::write_csv_dataset(&path, &data)?;
    outcome.summary.push(format!(
        "seed {seed}: {} train + {} test rows, {} features, {} classes -> {}",
        data.train.len(),
        data.test.len(),
        data.dim(),
        data.num_classes,
        path.display()
    ));
    Ok(outcome)
}

/// Trains one model per seed and writes its weights.
pub fn train(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let results: Vec<(u64, swap_core::Result<(PreparedTask, StageEval)>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = PreparedTask::prepare(&cfg.task, seed).and_then(|t| {
                let e = t.eval(t.model.weights())?;
                Ok((t, e))
            });
            (seed, run)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in results {
        match result {
            Ok((task, e)) => {
                let path = outcome.file(cfg.out.join(format!("weights-seed{seed}.json"))).to_path_buf();
                write_weights(&path, &task.model)?;
                outcome.summary.push(eval_line(&format!("seed {seed}"), &e));
                rows.push(vec![
                    seed.to_string(),
                    task.num_params().to_string(),
                    fmt_num(e.test_loss),
                    fmt_num(e.accuracy),
                    e.top5_accuracy.map(fmt_num).unwrap_or_default(),
                    fmt_num(e.train_loss),
                ]);
            }
            Err(e) => failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    let table = Table {
        header: vec!["seed", "params", "test_loss", "accuracy", "top5_accuracy", "train_loss"],
        rows,
    };
    table.write(outcome.file(cfg.out.join("train.csv")))?;
    record_failures(cfg, &mut outcome, &failures)?;
    Ok(outcome)
}

/// Passes gradients through and saves each stage's matrix.
struct Recording<'a, S> {
    inner: S,
    dir: &'a Path,
    seed: u64,
}

impl<S: GradientSource> GradientSource for Recording<'_, S> {
    fn num_params(&self) -> usize {
        self.inner.num_params()
    }

    fn gradients(&mut self, stage: usize, reference: &WeightVector) -> swap_core::Result<GradientMatrix> {
        let g = self.inner.gradients(stage, reference)?;
        let path = self.dir.join(gradient_file(self.seed, stage));
        fs::write(path, encode_matrix(&g.values().to_owned()))?;
        Ok(g)
    }

    fn evaluate(&self, weights: &WeightVector) -> swap_core::Result<Option<StageEval>> {
        self.inner.evaluate(weights)
    }

    fn protected(&self) -> Option<Vec<bool>> {
        self.inner.protected()
    }
}

pub fn gradient_file(seed: u64, stage: usize) -> String {
    format!("gradients-seed{seed}-stage{stage}.swapmat")
}

fn prune_seed(cfg: &RunConfig, start: Option<&TinyMlp>, seed: u64, dump: bool) -> swap_core::Result<PruneResult> {
    let task = match start {
        Some(model) => {
            let seeds = SeedPlan::from_run(seed);
            PreparedTask {
                spec: cfg.task.clone(),
                seeds,
                data: cfg.task.data.load(seeds.data)?,
                model: model.clone(),
            }
        }
        None => PreparedTask::prepare(&cfg.task, seed)?,
    };
    let schedule = cfg.schedule.build(task.num_params())?;
    let wbar = task.model.weights().clone();
    let ewr = cfg.ewr_config();
    if dump {
        let mut source = Recording {
            inner: task.gradient_source(),
            dir: &cfg.out,
            seed,
        };
        swap_prune(&mut source, &wbar, &schedule, &ewr)
    } else {
        swap_prune(&mut task.gradient_source(), &wbar, &schedule, &ewr)
    }
    .map_err(|e| swap_core::Error::Seed {
        seed,
        source: Box::new(e),
    })
}

/// Runs the configured EWR pipeline for every seed.
pub fn prune(cfg: &RunConfig, dump_gradients: bool) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let start = cfg.weights.as_deref().map(read_weights).transpose()?;
    if let Some(model) = &start {
        let data = cfg.task.data.load(SeedPlan::from_run(cfg.seeds[0]).data)?;
        if model.input_dim() != data.dim() || model.num_classes() != data.num_classes {
            return Err(crate::error::CliError::Weights(format!(
                "model maps {} -> {} but the data has {} features and {} classes",
                model.input_dim(),
                model.num_classes(),
                data.dim(),
                data.num_classes
            )));
        }
    }
    let results: Vec<(u64, swap_core::Result<PruneResult>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| (seed, prune_seed(cfg, start.as_ref(), seed, dump_gradients)))
        .collect();

    let mut done = Vec::new();
    let mut failures = Vec::new();
    for (seed, result) in results {
        match result {
            Ok(run) => done.push((seed, run)),
            Err(e) => failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    for (seed, run) in &done {
        let model = match &start {
            Some(m) => m.with_weights(run.final_weights.clone())?,
            None => {
                let data = cfg.task.data.load(SeedPlan::from_run(*seed).data)?;
                let dims = cfg.task.dims(data.dim(), data.num_classes);
                TinyMlp::new(dims, cfg.task.activation, run.final_weights.clone())?
            }
        };
        write_weights(outcome.file(cfg.out.join(format!("pruned-seed{seed}.json"))), &model)?;
        if dump_gradients {
            for s in &run.stages {
                outcome.files.push(cfg.out.join(gradient_file(*seed, s.stage)));
            }
        }
        if let Some(last) = run.stages.last() {
            if let Some(e) = &last.eval {
                outcome.summary.push(eval_line(
                    &format!("seed {seed} at sparsity {}", fmt_num(last.scheduled_sparsity)),
                    e,
                ));
            }
        }
    }
    if cfg.format == ReportFormat::Csv {
        prune_table(&done).write(outcome.file(cfg.out.join("prune.csv")))?;
    }
    let records: Vec<serde_json::Value> = done
        .iter()
        .map(|(seed, run)| serde_json::json!({ "seed": seed, "stages": run.stages }))
        .collect();
    write_json(outcome.file(cfg.out.join("prune.json")), &records)?;
    record_failures(cfg, &mut outcome, &failures)?;
    Ok(outcome)
}

/// LR versus EWR on shared seeds, batches and noise.
pub fn compare(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let report = compare_lr_ewr(
        &cfg.task,
        &cfg.schedule,
        &cfg.lr_config(),
        &cfg.ewr_config(),
        &cfg.seeds,
        cfg.confidence,
    )?;
    if cfg.format == ReportFormat::Csv {
        compare_table(&report).write(outcome.file(cfg.out.join("compare.csv")))?;
        compare_seed_table(&report).write(outcome.file(cfg.out.join("compare-seeds.csv")))?;
    }
    write_json(outcome.file(cfg.out.join("compare.json")), &report)?;

    for a in &report.aggregates {
        outcome.summary.push(format!(
            "sparsity {}: lr {} ewr {} diff {}%",
            fmt_num(a.sparsity),
            fmt_num(a.lr_loss),
            fmt_num(a.ewr_loss),
            fmt_num(a.diff_percent)
        ));
    }
    if let Some(last) = report.aggregates.len().checked_sub(1) {
        let (wins, trials) = report.wins(last);
        outcome.summary.push(format!(
            "final stage: EWR wins {wins}/{trials}, sign test p = {}",
            fmt_num(report.sign_test(last))
        ));
    }
    outcome.summary.push(report.formula.clone());
    record_failures(cfg, &mut outcome, &report.failures)?;
    Ok(outcome)
}

/// One EWR run per ε setting on shared seeds.
pub fn sweep(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let settings = cfg.epsilon_settings()?;
    let report = sweep_epsilon(
        &cfg.task,
        &cfg.schedule,
        &cfg.ewr_config(),
        &settings,
        &cfg.seeds,
        cfg.confidence,
    )?;
    if cfg.format == ReportFormat::Csv {
        sweep_table(&report).write(outcome.file(cfg.out.join("sweep.csv")))?;
        sweep_seed_table(&report).write(outcome.file(cfg.out.join("sweep-seeds.csv")))?;
    }
    write_json(outcome.file(cfg.out.join("sweep.json")), &report)?;
    let last_sparsity = report.rows.iter().map(|r| r.sparsity).fold(f64::NEG_INFINITY, f64::max);
    for r in report.rows.iter().filter(|r| r.sparsity == last_sparsity) {
        outcome.summary.push(format!(
            "epsilon {} at sparsity {}: ewr loss {}",
            r.epsilon,
            fmt_num(r.sparsity),
            fmt_num(r.ewr_loss)
        ));
    }
    record_failures(cfg, &mut outcome, &report.failures)?;
    Ok(outcome)
}

/// Squared distance from `x` to the barycenter of `points` under `nu`.
fn barycenter_sq_dist(x: &Array1<f64>, points: &Array2<f64>, nu: &[f64]) -> f64 {
    let bary = points.t().dot(&Array1::from(nu.to_vec()));
    (&bary - x).mapv(|v| v * v).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessRow {
    pub instance: usize,
    pub dim: usize,
    pub points: usize,
    pub target: f64,
    pub achieved: f64,
    pub residual: f64,
}

/// Convex-hull distance equality on random instances.
pub fn witness(cfg: &RunConfig) -> Result<Outcome> {
    let mut outcome = prepare_out(cfg)?;
    let spec = cfg.witness;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for i in 0..spec.instances {
        let mut rng = seeded(derive_seed(cfg.seeds[0], i as u64));
        let d = rng.random_range(1..=spec.max_dim);
        let m = rng.random_range(1..=spec.max_points);
        let x = Array1::from_shape_fn(d, |_| StandardNormal.sample(&mut rng));
        let points = Array2::from_shape_fn((m, d), |_| StandardNormal.sample(&mut rng));
        let raw: Vec<f64> = (0..m).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = raw.iter().sum();
        let result = ConvexWeights::new(raw.iter().map(|v| v / total).collect()).and_then(|target| {
            let nu = hull_equality_witness(x.view(), points.view(), &target, spec.tol)?;
            Ok((target, nu))
        });
        match result {
            Ok((target, nu)) => {
                let goal: f64 = target
                    .as_slice()
                    .iter()
                    .zip(points.rows())
                    .map(|(w, y)| w * (&y - &x).mapv(|v| v * v).sum())
                    .sum();
                let achieved = barycenter_sq_dist(&x, &points, nu.as_slice());
                rows.push(WitnessRow {
                    instance: i,
                    dim: d,
                    points: m,
                    target: goal,
                    achieved,
                    residual: (achieved - goal).abs(),
                });
            }
            Err(e) => failures.push(SeedFailure {
                seed: i as u64,
                message: e.to_string(),
            }),
        }
    }
    if cfg.format == ReportFormat::Csv {
        let table = Table {
            header: vec!["instance", "dim", "points", "target", "achieved", "residual"],
            rows: rows
                .iter()
                .map(|r| {
                    vec![
                        r.instance.to_string(),
                        r.dim.to_string(),
                        r.points.to_string(),
                        fmt_num(r.target),
                        fmt_num(r.achieved),
                        fmt_num(r.residual),
                    ]
                })
                .collect(),
        };
        table.write(outcome.file(cfg.out.join("witness.csv")))?;
    }
    write_json(outcome.file(cfg.out.join("witness.json")), &rows)?;
    let worst = rows.iter().map(|r| r.residual).fold(0.0, f64::max);
    outcome
        .summary
        .push(format!("{} instances, max residual {}", rows.len(), fmt_num(worst)));
    record_failures(cfg, &mut outcome, &failures)?;
    Ok(outcome)
}
