//! Command-line driver: JSON configs in, CSV tables and JSON summaries out.
//!
//! Output bytes depend only on the subcommand, the config and the seed; the
//! thread count and wall clock never leak into them unless `--timing` asks.

pub mod config;
pub mod error;
pub mod output;
pub mod run;

use std::path::PathBuf;
use std::time::Instant;

pub use config::{parse_config, ExperimentConfig};
pub use error::CliError;
pub use output::{emit, Destination, RunOutput};
pub use run::{run, Subcommand};

/// Everything one invocation needs besides the subcommand.
#[derive(Debug, Clone, Default)]
pub struct Invocation {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub timing: bool,
}

/// Parse the config, apply overrides, run and write the results.
pub fn execute(sub: Subcommand, inv: &Invocation) -> Result<(), CliError> {
    let bytes = std::fs::read(&inv.config).map_err(|source| CliError::Io {
        path: inv.config.display().to_string(),
        source,
    })?;
    let mut cfg = parse_config(&bytes)?;
    if let Some(seed) = inv.seed {
        cfg.sim.seed = seed;
    }
    let dest = Destination {
        path: inv.out.clone().or_else(|| cfg.output.path.as_ref().map(PathBuf::from)),
        format: cfg.output.format,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = inv.threads {
        if n == 0 {
            return Err(CliError::Config {
                path: "--threads".into(),
                message: "must be positive".into(),
            });
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::ThreadPool(e.to_string()))?;
    let start = Instant::now();
    let out = pool.install(|| run(sub, &cfg))?;
    let wall = inv.timing.then(|| start.elapsed().as_secs_f64());
    emit(&dest, sub.name(), &cfg, wall, &out)
}
