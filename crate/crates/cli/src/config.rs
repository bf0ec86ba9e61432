//! Run configuration: JSON file or inline text, defaults for omitted fields,
//! then command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use swap_core::ewr::{EwrConfig, PlanRefresh, PlanSolver, StepDirection};
use swap_core::ot::CrossCovariance;
use swap_core::pruner::{DataSpec, EpsilonSetting, ScheduleKind, ScheduleSpec, TaskSpec, DEFAULT_CONFIDENCE};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

/// Random instances for the `witness` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WitnessSpec {
    pub instances: usize,
    pub max_dim: usize,
    pub max_points: usize,
    pub tol: f64,
}

impl Default for WitnessSpec {
    fn default() -> Self {
        Self {
            instances: 100,
            max_dim: 5,
            max_points: 8,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskSpec,
    pub lambda: f64,
    pub epsilon: f64,
    pub plan: PlanSolver,
    pub direction: StepDirection,
    pub inner_steps: usize,
    pub plan_refresh: PlanRefresh,
    pub freeze_reference: bool,
    pub cross_covariance: CrossCovariance,
    pub sinkhorn_tol: f64,
    pub max_iter: usize,
    pub schedule: ScheduleSpec,
    pub seeds: Vec<u64>,
    /// Settings of `sweep-epsilon`: numbers or `inf`.
    pub epsilons: Vec<String>,
    pub confidence: f64,
    /// Starting weights for `prune`; trained from scratch when absent.
    pub weights: Option<PathBuf>,
    pub witness: WitnessSpec,
    pub out: PathBuf,
    pub format: ReportFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ewr = EwrConfig::default();
        Self {
            task: TaskSpec::default(),
            lambda: ewr.lambda,
            epsilon: ewr.epsilon,
            plan: ewr.plan_solver,
            direction: ewr.direction,
            inner_steps: ewr.inner_steps,
            plan_refresh: ewr.plan_refresh,
            freeze_reference: ewr.freeze_reference,
            cross_covariance: ewr.cross_covariance,
            sinkhorn_tol: ewr.sinkhorn_tol,
            max_iter: ewr.max_iter,
            schedule: ScheduleSpec::default(),
            seeds: vec![0],
            epsilons: ["0", "0.1", "1", "10", "inf"].map(String::from).to_vec(),
            confidence: DEFAULT_CONFIDENCE,
            weights: None,
            witness: WitnessSpec::default(),
            out: PathBuf::from("swap-out"),
            format: ReportFormat::Csv,
        }
    }
}

fn constraint(field: &'static str, bound: &'static str, value: impl ToString) -> CliError {
    CliError::Constraint {
        field,
        bound,
        value: value.to_string(),
    }
}

fn require_file(field: &'static str, path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingFile {
            field,
            path: path.to_path_buf(),
        })
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(constraint("lambda", "a finite number >= 0", self.lambda));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(constraint("epsilon", "a finite number >= 0", self.epsilon));
        }
        if self.inner_steps == 0 {
            return Err(constraint("inner_steps", ">= 1", self.inner_steps));
        }
        if self.max_iter == 0 {
            return Err(constraint("max_iter", ">= 1", self.max_iter));
        }
        if !(self.sinkhorn_tol > 0.0) {
            return Err(constraint("sinkhorn_tol", "> 0", self.sinkhorn_tol));
        }
        let s = &self.schedule;
        if s.kind == ScheduleKind::Custom {
            return Err(constraint("schedule.kind", "exponential or linear", "custom"));
        }
        if !(0.0..=1.0).contains(&s.initial) {
            return Err(constraint("schedule.initial", "in [0, 1]", s.initial));
        }
        if !(0.0..=1.0).contains(&s.target) {
            return Err(constraint("schedule.target", "in [0, 1]", s.target));
        }
        if s.initial > s.target {
            return Err(constraint("schedule.initial", "<= schedule.target", s.initial));
        }
        if s.stages == 0 {
            return Err(constraint("schedule.stages", ">= 1", s.stages));
        }
        let t = &self.task;
        if !(0.0..=1.0).contains(&t.noise_fraction) {
            return Err(constraint("task.noise_fraction", "in [0, 1]", t.noise_fraction));
        }
        if !(t.noise_level >= 0.0 && t.noise_level.is_finite()) {
            return Err(constraint("task.noise_level", "a finite number >= 0", t.noise_level));
        }
        if t.fisher_samples == 0 {
            return Err(constraint("task.fisher_samples", ">= 1", t.fisher_samples));
        }
        if t.hidden.contains(&0) {
            return Err(constraint("task.hidden", "layer sizes >= 1", format!("{:?}", t.hidden)));
        }
        match &t.data {
            DataSpec::Blobs { .. } => {}
            DataSpec::Csv { path } => require_file("task.data.path", path)?,
            DataSpec::Idx { images, labels } => {
                require_file("task.data.images", images)?;
                require_file("task.data.labels", labels)?;
            }
        }
        if self.seeds.is_empty() {
            return Err(constraint("seeds", "nonempty", "[]"));
        }
        if self.epsilons.is_empty() {
            return Err(constraint("epsilons", "nonempty", "[]"));
        }
        for e in &self.epsilons {
            if EpsilonSetting::parse(e).is_err() {
                return Err(constraint("epsilons", "numbers >= 0 or \"inf\"", e));
            }
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(constraint("confidence", "in (0, 1)", self.confidence));
        }
        if let Some(w) = &self.weights {
            require_file("weights", w)?;
        }
        let w = &self.witness;
        if w.max_dim == 0 || w.max_points == 0 {
            return Err(constraint("witness.max_dim/max_points", ">= 1", format!("{}/{}", w.max_dim, w.max_points)));
        }
        if !(w.tol > 0.0) {
            return Err(constraint("witness.tol", "> 0", w.tol));
        }
        Ok(())
    }

    /// Base configuration shared by both pipelines.
    fn base(&self) -> EwrConfig {
        EwrConfig {
            lambda: self.lambda,
            epsilon: self.epsilon,
            plan_solver: self.plan,
            sinkhorn_tol: self.sinkhorn_tol,
            max_iter: self.max_iter,
            seed: 0,
            cross_covariance: self.cross_covariance,
            direction: self.direction,
            inner_steps: self.inner_steps,
            plan_refresh: self.plan_refresh,
            freeze_reference: self.freeze_reference,
        }
    }

    /// The EWR pipeline. An ε of 0 with an entropic solver selects the
    /// diagonal plan.
    pub fn ewr_config(&self) -> EwrConfig {
        let base = self.base();
        if self.plan.needs_epsilon() {
            EpsilonSetting::Finite(self.epsilon).config(&base)
        } else {
            base
        }
    }

    /// The least-squares baseline with the same loop settings.
    pub fn lr_config(&self) -> EwrConfig {
        EwrConfig {
            epsilon: 0.0,
            plan_solver: PlanSolver::Diagonal,
            ..self.base()
        }
    }

    pub fn epsilon_settings(&self) -> Result<Vec<EpsilonSetting>> {
        Ok(self
            .epsilons
            .iter()
            .map(|e| EpsilonSetting::parse(e))
            .collect::<swap_core::Result<_>>()?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses JSON text; omitted fields take their defaults. Does not validate.
pub fn parse_config_text(text: &str) -> Result<RunConfig> {
    serde_json::from_str(text).map_err(|e| CliError::ConfigSyntax {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads a config given as a path or as inline JSON text (anything starting
/// with `{`). Does not validate.
pub fn load_config(source: &str) -> Result<RunConfig> {
    if source.trim_start().starts_with('{') {
        parse_config_text(source)
    } else {
        parse_config_text(&fs::read_to_string(source).map_err(io_err(source))?)
    }
}

/// [`load_config`] followed by validation.
pub fn parse_config(source: &str) -> Result<RunConfig> {
    let cfg = load_config(source)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Values given on the command line. `None` leaves the file or default value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub epsilon: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub sparsity: Option<f64>,
    pub stages: Option<usize>,
    pub schedule: Option<ScheduleKind>,
    pub plan: Option<PlanSolver>,
    pub noise_frac: Option<f64>,
    pub noise_level: Option<f64>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
    pub format: Option<ReportFormat>,
    pub freeze_reference: bool,
    pub inner_steps: Option<usize>,
    pub weights: Option<PathBuf>,
}

impl Overrides {
    /// `epsilon_list` routes `--epsilon` to the sweep list instead of the
    /// single EWR value.
    pub fn apply(&self, cfg: &mut RunConfig, epsilon_list: bool) -> Result<()> {
        if let Some(tokens) = &self.epsilon {
            if epsilon_list {
                cfg.epsilons = tokens.clone();
            } else {
                let [token] = tokens.as_slice() else {
                    return Err(CliError::Usage("--epsilon takes one value for this command".into()));
                };
                match EpsilonSetting::parse(token)? {
                    EpsilonSetting::Infinite => cfg.plan = PlanSolver::Uniform,
                    EpsilonSetting::Finite(v) => cfg.epsilon = v,
                }
            }
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.sparsity {
            cfg.schedule.target = v;
        }
        if let Some(v) = self.stages {
            cfg.schedule.stages = v;
        }
        if let Some(v) = self.schedule {
            cfg.schedule.kind = v;
        }
        if let Some(v) = self.plan {
            cfg.plan = v;
        }
        if let Some(v) = self.noise_frac {
            cfg.task.noise_fraction = v;
        }
        if let Some(v) = self.noise_level {
            cfg.task.noise_level = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = self.format {
            cfg.format = v;
        }
        if self.freeze_reference {
            cfg.freeze_reference = true;
        }
        if let Some(v) = self.inner_steps {
            cfg.inner_steps = v;
        }
        if let Some(v) = &self.weights {
            cfg.weights = Some(v.clone());
        }
        Ok(())
    }
}

/// Parses `3`, `0,4,7` or the half-open range `0..20`.
pub fn parse_seeds(text: &str) -> std::result::Result<Vec<u64>, String> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|e| format!("bad range start {a:?}: {e}"))?;
        let b: u64 = b.trim().parse().map_err(|e| format!("bad range end {b:?}: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {t}"));
        }
        return Ok((a..b).collect());
    }
    t.split(',')
        .map(|s| s.trim().parse::<u64>().map_err(|e| format!("bad seed {s:?}: {e}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        let cfg = parse_config("{}").unwrap();
        assert_eq!(cfg.lambda, 0.01);
        assert_eq!(cfg.epsilon, 1.0);
        assert_eq!(cfg.schedule.kind, ScheduleKind::Exponential);
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn negative_epsilon_names_field_and_bound() {
        let msg = parse_config(r#"{"epsilon": -1}"#).unwrap_err().to_string();
        assert!(msg.contains("`epsilon`") && msg.contains(">= 0"), "{msg}");
    }

    #[test]
    fn syntax_errors_report_line_and_column() {
        match parse_config("{\n  \"lambda\": 0.1,\n  oops\n}") {
            Err(CliError::ConfigSyntax { line, column, .. }) => assert_eq!((line, column), (3, 3)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(parse_config(r#"{"lamda": 0.1}"#), Err(CliError::ConfigSyntax { .. })));
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.lambda = 0.125;
        cfg.seeds = vec![3, 1, 4];
        cfg.schedule.kind = ScheduleKind::Linear;
        cfg.plan = PlanSolver::ClosedForm;
        assert_eq!(parse_config_text(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn missing_data_file_is_rejected() {
        let msg = parse_config(r#"{"task": {"data": {"kind": "csv", "path": "/no/such/file.csv"}}}"#)
            .unwrap_err()
            .to_string();
        assert!(msg.contains("task.data.path"), "{msg}");
    }

    #[test]
    fn schedule_alias_and_partial_objects() {
        let cfg = parse_config(r#"{"schedule": {"kind": "exp", "target": 0.5}}"#).unwrap();
        assert_eq!(cfg.schedule.kind, ScheduleKind::Exponential);
        assert_eq!(cfg.schedule.target, 0.5);
        assert_eq!(cfg.schedule.stages, 10);
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = parse_config(r#"{"lambda": 0.5, "epsilon": 2}"#).unwrap();
        let o = Overrides {
            lambda: Some(0.25),
            epsilon: Some(vec!["inf".into()]),
            seeds: Some(vec![7]),
            ..Overrides::default()
        };
        o.apply(&mut cfg, false).unwrap();
        assert_eq!(cfg.lambda, 0.25);
        assert_eq!(cfg.epsilon, 2.0);
        assert_eq!(cfg.plan, PlanSolver::Uniform);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn zero_epsilon_selects_diagonal_plan() {
        let cfg = RunConfig {
            epsilon: 0.0,
            ..RunConfig::default()
        };
        assert_eq!(cfg.ewr_config().plan_solver, PlanSolver::Diagonal);
        assert_eq!(cfg.lr_config().plan_solver, PlanSolver::Diagonal);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("5, 2").unwrap(), vec![5, 2]);
        assert!(parse_seeds("3..3").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
