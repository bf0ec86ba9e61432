//! Command-line surface. Flags override config-file fields, which override
//! defaults.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use swap_core::ewr::PlanSolver;
use swap_core::pruner::ScheduleKind;

use crate::commands::{self, Outcome};
use crate::config::{load_config, parse_seeds, Overrides, ReportFormat, RunConfig};
use crate::error::Result;

#[derive(Debug, Parser)]
#[command(name = "swap", version, about = "Sparse entropic Wasserstein regression pruning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset (first seed) as CSV.
    GenData(Common),
    /// Train one model per seed and save its weights.
    Train(Common),
    /// Prune with the configured plan solver.
    Prune {
        #[command(flatten)]
        common: Common,
        /// Dump every stage's gradient matrix as a SWAPMAT1 file.
        #[arg(long)]
        dump_gradients: bool,
    },
    /// Compare the least-squares baseline with EWR over seeds.
    Compare(Common),
    /// Run EWR once per ε in `--epsilon` (numbers or `inf`).
    SweepEpsilon(Common),
    /// Check the convex-hull distance equality on random instances.
    Witness {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        instances: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScheduleArg {
    Exp,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlanArg {
    Sinkhorn,
    ClosedForm,
    Diagonal,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedList(pub Vec<u64>);

fn seed_list(text: &str) -> std::result::Result<SeedList, String> {
    parse_seeds(text).map(SeedList)
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON config file, or inline JSON text starting with `{`.
    #[arg(long)]
    pub config: Option<String>,
    /// ε value; comma-separated list for sweep-epsilon. `inf` selects the uniform plan.
    #[arg(long, value_delimiter = ',')]
    pub epsilon: Option<Vec<String>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target sparsity fraction of the last stage.
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Number of schedule steps T (stages 0..=T).
    #[arg(long)]
    pub stages: Option<usize>,
    #[arg(long, value_enum)]
    pub schedule: Option<ScheduleArg>,
    #[arg(long, value_enum)]
    pub plan: Option<PlanArg>,
    #[arg(long)]
    pub noise_frac: Option<f64>,
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// `3`, `0,4,7` or the half-open range `0..20`.
    #[arg(long, value_parser = seed_list)]
    pub seeds: Option<SeedList>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub freeze_reference: bool,
    #[arg(long)]
    pub inner_steps: Option<usize>,
    /// Starting weights (JSON) for prune; trained from scratch when absent.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

impl Common {
    pub fn overrides(&self) -> Overrides {
        Overrides {
            epsilon: self.epsilon.clone(),
            lambda: self.lambda,
            sparsity: self.sparsity,
            stages: self.stages,
            schedule: self.schedule.map(|s| match s {
                ScheduleArg::Exp => ScheduleKind::Exponential,
                ScheduleArg::Linear => ScheduleKind::Linear,
            }),
            plan: self.plan.map(|p| match p {
                PlanArg::Sinkhorn => PlanSolver::Sinkhorn,
                PlanArg::ClosedForm => PlanSolver::ClosedForm,
                PlanArg::Diagonal => PlanSolver::Diagonal,
                PlanArg::Uniform => PlanSolver::Uniform,
            }),
            noise_frac: self.noise_frac,
            noise_level: self.noise_level,
            seeds: self.seeds.clone().map(|s| s.0),
            out: self.out.clone(),
            format: self.format.map(|f| match f {
                FormatArg::Csv => ReportFormat::Csv,
                FormatArg::Json => ReportFormat::Json,
            }),
            freeze_reference: self.freeze_reference,
            inner_steps: self.inner_steps,
            weights: self.weights.clone(),
        }
    }

    /// File (or defaults), then flags, then validation.
    pub fn resolve(&self, epsilon_list: bool) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(source) => load_config(source)?,
            None => RunConfig::default(),
        };
        self.overrides().apply(&mut cfg, epsilon_list)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::GenData(c) => commands::gen_data(&c.resolve(false)?),
        Command::Train(c) => commands::train(&c.resolve(false)?),
        Command::Prune { common, dump_gradients } => commands::prune(&common.resolve(false)?, *dump_gradients),
        Command::Compare(c) => commands::compare(&c.resolve(false)?),
        Command::SweepEpsilon(c) => commands::sweep(&c.resolve(true)?),
        Command::Witness { common, instances } => {
            let mut cfg = common.resolve(false)?;
            if let Some(n) = instances {
                cfg.witness.instances = *n;
            }
            commands::witness(&cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_parse_and_override() {
        let cli = Cli::try_parse_from([
            "swap",
            "compare",
            "--config",
            r#"{"lambda": 0.5, "inner_steps": 3}"#,
            "--lambda",
            "0.2",
            "--seeds",
            "0..4",
            "--schedule",
            "linear",
            "--plan",
            "closed-form",
            "--freeze-reference",
        ])
        .unwrap();
        let Command::Compare(c) = &cli.command else { panic!() };
        let cfg = c.resolve(false).unwrap();
        assert_eq!(cfg.lambda, 0.2);
        assert_eq!(cfg.inner_steps, 3);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3]);
        assert_eq!(cfg.schedule.kind, ScheduleKind::Linear);
        assert_eq!(cfg.plan, PlanSolver::ClosedForm);
        assert!(cfg.freeze_reference);
    }

    #[test]
    fn sweep_takes_an_epsilon_list() {
        let cli = Cli::try_parse_from(["swap", "sweep-epsilon", "--epsilon", "0,1,inf"]).unwrap();
        let Command::SweepEpsilon(c) = &cli.command else { panic!() };
        assert_eq!(c.resolve(true).unwrap().epsilons, vec!["0", "1", "inf"]);
        assert!(c.resolve(false).is_err());
    }

    #[test]
    fn flag_values_are_validated() {
        let cli = Cli::try_parse_from(["swap", "prune", "--sparsity", "1.5"]).unwrap();
        let Command::Prune { common, .. } = &cli.command else { panic!() };
        assert!(common.resolve(false).unwrap_err().to_string().contains("schedule.target"));
    }
}
