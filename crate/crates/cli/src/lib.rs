//! Command-line driver: config parsing, subcommands, report writers and the
//! `SWAPMAT1` matrix format.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod matrix_io;
pub mod report;
pub mod weights;

pub use error::{CliError, Result};

/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "SWAP_THREADS";

/// Sizes the global worker pool from `SWAP_THREADS`; unset or 0 keeps the
/// machine default.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a thread count, got {raw:?}")))?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    Ok(())
}
