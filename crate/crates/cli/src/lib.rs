//! Command implementations behind the `obsint` executable.

pub mod commands;
pub mod config;
pub mod lock;

pub use commands::{cmd_eval, cmd_gradcheck, cmd_predict, cmd_simulate, cmd_train, load_sequences, EvalOutcome};
pub use config::{load_config, parse_config, ExperimentConfig};

/// Exit code when evaluation exceeds a configured threshold.
pub const EXIT_THRESHOLD: u8 = 3;
/// Exit code when a gradient check fails.
pub const EXIT_GRADCHECK: u8 = 4;

/// Builds the global worker pool, capped by `OBSINT_THREADS` when set.
pub fn init_threads(var: Option<&str>) -> anyhow::Result<()> {
    let Some(v) = var else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| anyhow::anyhow!("OBSINT_THREADS must be a positive integer, got `{v}`"))?;
    if n == 0 {
        anyhow::bail!("OBSINT_THREADS must be a positive integer, got `{v}`");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}
