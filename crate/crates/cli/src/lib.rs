//! Experiment harness: config files, runs, sweeps, static-hyperparameter
//! search, hypergradient checks and reports.

pub mod config;
pub mod error;
pub mod gradcheck;
pub mod report;
pub mod run;
pub mod search;
pub mod svg;
pub mod sweep;

pub use config::{parse_config, ExperimentConfig, RawConfig};
pub use error::{ConfigError, HarnessError, Result};
pub use report::{report, ReportOptions};
pub use run::{run_experiment, ReportSummary, RunOutcome};
pub use search::{bo_search, SpaceKind};
pub use sweep::{sweep, SweepAxis, SweepRow};

/// Environment variable that overrides `task.seed`.
pub const SEED_ENV: &str = "GUIDED_SEED";

/// Apply `GUIDED_SEED`, if set, on top of the config file's seed.
pub fn apply_env_seed(raw: &mut RawConfig) -> Result<()> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(raw.set("task.seed", v.trim())?),
        Err(_) => Ok(()),
    }
}
