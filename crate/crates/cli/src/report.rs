//! CSV and JSON report writers. CSV numbers use 6 significant digits in
//! fixed notation; a missing value is an empty field.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use swap_core::pruner::{CompareReport, PruneResult, SeedFailure, SweepReport};

use crate::error::{io_err, Result};

pub const ERRORS_FILE: &str = "errors.csv";

const SIGNIFICANT: i32 = 6;

pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return format!("{:.*}", (SIGNIFICANT - 1) as usize, 0.0);
    }
    // The exponent of the correctly rounded scientific form accounts for
    // rounding that carries into a new digit (9.9999996 → 10.0000).
    let sci = format!("{:.*e}", (SIGNIFICANT - 1) as usize, v);
    let exp: i32 = sci.rsplit_once('e').and_then(|(_, e)| e.parse().ok()).expect("scientific format");
    let decimals = (SIGNIFICANT - 1 - exp).max(0) as usize;
    let rounded: f64 = sci.parse().expect("scientific format");
    format!("{rounded:.decimals$}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

/// A header plus string rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(io_err(path))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

pub fn compare_table(report: &CompareReport) -> Table {
    Table {
        header: vec![
            "sparsity",
            "lr_loss",
            "lr_ci",
            "ewr_loss",
            "ewr_ci",
            "diff_percent",
            "lr_acc",
            "ewr_acc",
            "seeds",
        ],
        rows: report
            .aggregates
            .iter()
            .map(|a| {
                vec![
                    fmt_num(a.sparsity),
                    fmt_num(a.lr_loss),
                    fmt_opt(a.lr_ci),
                    fmt_num(a.ewr_loss),
                    fmt_opt(a.ewr_ci),
                    fmt_num(a.diff_percent),
                    fmt_num(a.lr_acc),
                    fmt_num(a.ewr_acc),
                    a.seeds.to_string(),
                ]
            })
            .collect(),
    }
}

pub fn compare_seed_table(report: &CompareReport) -> Table {
    Table {
        header: vec![
            "seed",
            "stage",
            "sparsity",
            "lr_loss",
            "ewr_loss",
            "diff_percent",
            "lr_acc",
            "ewr_acc",
        ],
        rows: report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.seed.to_string(),
                    r.stage.to_string(),
                    fmt_num(r.sparsity),
                    fmt_num(r.lr_loss),
                    fmt_num(r.ewr_loss),
                    fmt_num(r.diff_percent),
                    fmt_num(r.lr_acc),
                    fmt_num(r.ewr_acc),
                ]
            })
            .collect(),
    }
}

pub fn sweep_table(report: &SweepReport) -> Table {
    Table {
        header: vec!["epsilon", "sparsity", "ewr_loss", "ci", "seeds"],
        rows: report
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.epsilon.clone(),
                    fmt_num(r.sparsity),
                    fmt_num(r.ewr_loss),
                    fmt_opt(r.ci),
                    r.seeds.to_string(),
                ]
            })
            .collect(),
    }
}

pub fn sweep_seed_table(report: &SweepReport) -> Table {
    Table {
        header: vec!["epsilon", "seed", "stage", "sparsity", "ewr_loss", "ewr_acc"],
        rows: report
            .seed_rows
            .iter()
            .map(|r| {
                vec![
                    r.epsilon.clone(),
                    r.seed.to_string(),
                    r.stage.to_string(),
                    fmt_num(r.sparsity),
                    fmt_num(r.ewr_loss),
                    fmt_num(r.ewr_acc),
                ]
            })
            .collect(),
    }
}

pub fn prune_table(runs: &[(u64, PruneResult)]) -> Table {
    let mut rows = Vec::new();
    for (seed, run) in runs {
        for s in &run.stages {
            let eval = s.eval.as_ref();
            rows.push(vec![
                seed.to_string(),
                s.stage.to_string(),
                fmt_num(s.scheduled_sparsity),
                s.target_nonzeros.to_string(),
                s.nonzeros.to_string(),
                fmt_num(s.step_size),
                fmt_opt(eval.map(|e| e.test_loss)),
                fmt_opt(eval.map(|e| e.accuracy)),
                fmt_opt(eval.and_then(|e| e.top5_accuracy)),
                fmt_opt(eval.map(|e| e.train_loss)),
                s.plan.iterations.to_string(),
                fmt_num(s.plan.max_residual),
            ]);
        }
    }
    Table {
        header: vec![
            "seed",
            "stage",
            "sparsity",
            "target_nonzeros",
            "nonzeros",
            "step_size",
            "test_loss",
            "accuracy",
            "top5_accuracy",
            "train_loss",
            "plan_iterations",
            "plan_residual",
        ],
        rows,
    }
}

/// Writes `errors.csv` into `dir` when there are failures.
pub fn write_errors(dir: &Path, failures: &[SeedFailure]) -> Result<Option<PathBuf>> {
    if failures.is_empty() {
        return Ok(None);
    }
    let table = Table {
        header: vec!["seed", "message"],
        rows: failures.iter().map(|f| vec![f.seed.to_string(), f.message.clone()]).collect(),
    };
    let path = dir.join(ERRORS_FILE);
    table.write(&path)?;
    Ok(Some(path))
}
