use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sinkhorn did not converge after {iterations} iterations (residual {residual:.3e})")]
    SinkhornNotConverged { iterations: usize, residual: f64 },

    #[error(
        "kernel exp(-C/eps) underflowed to an all-zero {axis} {index} at eps={epsilon}; \
         raise epsilon or enable the log-domain path"
    )]
    KernelUnderflow {
        axis: &'static str,
        index: usize,
        epsilon: f64,
    },

    #[error("transport plan infeasible: marginal residual {residual:.3e} exceeds {tol:.3e}")]
    InfeasiblePlan { residual: f64, tol: f64 },

    #[error("transport plan row {0} has zero mass")]
    ZeroPlanRow(usize),

    #[error("degenerate variance in closed-form plan ({0})")]
    DegenerateVariance(&'static str),

    #[error("witness bisection failed to bracket (residual {residual:.3e}); this is a bug")]
    WitnessBracket { residual: f64 },

    #[error("noise calibration cannot reach target std {target:.6e}; achievable max {achievable:.6e}")]
    NoiseCalibration { target: f64, achievable: f64 },

    #[error("zero standard deviation in gradient matrix; cannot calibrate noise")]
    ZeroGradientStd,

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("seed {seed}: {source}")]
    Seed {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed data file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
