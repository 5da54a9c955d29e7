use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use guided_core::guided::{guided_train, RunLog};
use guided_core::models::make_task;
use guided_core::numerics::Rng;

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const RUN_CSV: &str = "run.csv";
pub const CONFIG_ECHO: &str = "config.echo";
pub const SUMMARY_TXT: &str = "summary.txt";
/// Wall-clock seconds; kept apart so the other files stay byte-identical
/// across repeated runs.
pub const TIMING_TXT: &str = "timing.txt";

/// Per-run (or per-group) accounting shown in reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub best_dev_loss: Option<f64>,
    pub final_dev_loss: Option<f64>,
    /// First evaluated step whose dev loss reached the target; `None` when
    /// the target was never reached or no target was set.
    pub steps_to_target: Option<u64>,
    pub target: Option<f64>,
    pub total_runs: usize,
    pub total_steps: u64,
    pub wall_clock_secs: Option<f64>,
}

/// First eval step with dev loss at or below `target`.
pub fn steps_to_target(log: &RunLog, target: f64) -> Option<u64> {
    log.dev_losses().find(|&(_, d)| d <= target).map(|(s, _)| s)
}

impl ReportSummary {
    pub fn from_log(log: &RunLog, target: Option<f64>) -> Self {
        ReportSummary {
            best_dev_loss: log.best_dev_loss(),
            final_dev_loss: log.final_dev_loss(),
            steps_to_target: target.and_then(|t| steps_to_target(log, t)),
            target,
            total_runs: 1,
            total_steps: log.len() as u64,
            wall_clock_secs: None,
        }
    }

    /// Flat `key = value` text; wall-clock is deliberately left out.
    pub fn to_text(&self) -> String {
        let num = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_else(|| "none".into());
        let mut s = String::new();
        let _ = writeln!(s, "best_dev_loss = {}", num(self.best_dev_loss));
        let _ = writeln!(s, "final_dev_loss = {}", num(self.final_dev_loss));
        let reached = match (self.target, self.steps_to_target) {
            (None, _) => "none".to_string(),
            (Some(_), Some(step)) => step.to_string(),
            (Some(_), None) => "unreached".to_string(),
        };
        let _ = writeln!(s, "target_dev_loss = {}", num(self.target));
        let _ = writeln!(s, "steps_to_target = {reached}");
        let _ = writeln!(s, "total_runs = {}", self.total_runs);
        let _ = writeln!(s, "total_steps = {}", self.total_steps);
        s
    }
}

/// Result of one experiment.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub log: RunLog,
    pub summary: ReportSummary,
}

/// Write every file or none: on the first failure the files already
/// written are removed again.
pub(crate) fn write_files(dir: &Path, files: &[(&str, Vec<u8>)]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut written: Vec<PathBuf> = Vec::new();
    for (name, bytes) in files {
        let path = dir.join(name);
        if let Err(e) = fs::write(&path, bytes) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            let _ = fs::remove_file(&path);
            return Err(HarnessError::io(path, e));
        }
        written.push(path);
    }
    Ok(())
}

/// Train according to `cfg` without touching the filesystem.
pub fn train(cfg: &ExperimentConfig) -> Result<RunLog> {
    let seed = cfg.task.seed;
    let task = make_task(&cfg.task_spec(), &Rng::new(seed, 0))?;
    Ok(guided_train(
        &task,
        &cfg.train_config(),
        &Rng::new(seed, 0),
    )?)
}

/// Train and write `run.csv`, `config.echo`, `summary.txt` and `timing.txt`
/// into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome> {
    let started = Instant::now();
    let log = train(cfg)?;
    let secs = started.elapsed().as_secs_f64();
    let mut summary = ReportSummary::from_log(&log, cfg.train.target_dev_loss);
    write_files(
        out_dir,
        &[
            (RUN_CSV, log.to_csv_string().into_bytes()),
            (CONFIG_ECHO, cfg.to_echo().into_bytes()),
            (SUMMARY_TXT, summary.to_text().into_bytes()),
            (
                TIMING_TXT,
                format!("wall_clock_secs = {secs:.3}\n").into_bytes(),
            ),
        ],
    )?;
    summary.wall_clock_secs = Some(secs);
    Ok(RunOutcome {
        dir: out_dir.to_path_buf(),
        log,
        summary,
    })
}

/// Read `wall_clock_secs` back from a run directory, if present.
pub fn read_wall_clock(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join(TIMING_TXT)).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("wall_clock_secs = "))
        .and_then(|v| v.trim().parse().ok())
}
