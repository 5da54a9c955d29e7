use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guided_cli::gradcheck::{gradcheck, render_table, DEFAULT_STEPS};
use guided_cli::report::{REPORT_MD, REPORT_SVG};
use guided_cli::{
    apply_env_seed, bo_search, report, run_experiment, sweep, HarnessError, RawConfig,
    ReportOptions, SpaceKind, SweepAxis,
};
use guided_core::models::TaskKind;
use guided_core::optim::OptimizerKind;

#[derive(Parser, Debug)]
#[command(
    name = "guided",
    version,
    about = "Guided hyperparameter learning experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once and write run.csv, config.echo and summary.txt.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; defaults to `output.dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One run per value (cross product when several --param are given).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Config field such as `guided.meta_lr`; repeatable.
        #[arg(long = "param", required = true)]
        params: Vec<String>,
        /// Comma-separated values, one list per --param in the same order.
        #[arg(long = "values", required = true, allow_hyphen_values = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bayesian optimization over constant hyperparameters.
    Bo {
        #[arg(long)]
        config: PathBuf,
        /// alpha, beta1 or both.
        #[arg(long)]
        space: String,
        #[arg(long)]
        budget: usize,
        #[arg(long)]
        n_init: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare analytic hypergradients with finite differences.
    Gradcheck {
        #[arg(long, value_delimiter = ',')]
        optimizer: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        task: Vec<String>,
        #[arg(long, value_delimiter = ',')]
        steps: Vec<u64>,
        /// Relative-error tolerance; per-optimizer defaults when absent.
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Summary table and SVG charts for finished runs.
    Report {
        /// Run, sweep or BO directories, comma-separated.
        #[arg(long, value_delimiter = ',', required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Log-scale dev-loss axis.
        #[arg(long)]
        log_loss: bool,
        /// Add measured wall-clock (makes the report non-reproducible).
        #[arg(long)]
        timing: bool,
    },
}

fn load_config(path: &Path) -> Result<RawConfig, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let mut raw = RawConfig::parse(&text)?;
    apply_env_seed(&mut raw)?;
    Ok(raw)
}

fn parse_kinds<T>(names: &[String], all: &[T]) -> Result<Vec<T>, HarnessError>
where
    T: Copy + std::str::FromStr,
    T::Err: std::fmt::Display,
{
    if names.is_empty() {
        return Ok(all.to_vec());
    }
    names
        .iter()
        .map(|n| {
            n.trim()
                .parse::<T>()
                .map_err(|e| HarnessError::Invalid(e.to_string()))
        })
        .collect()
}

fn execute(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run { config, out } => {
            let raw = load_config(&config)?;
            let cfg = raw.resolve().map_err(HarnessError::from)?;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            let outcome = run_experiment(&cfg, &dir)?;
            print!("{}", outcome.summary.to_text());
            println!("wrote {}", dir.display());
        }
        Command::Sweep {
            config,
            params,
            values,
            jobs,
            out,
        } => {
            if params.len() != values.len() {
                return Err(HarnessError::Invalid(format!(
                    "{} --param given but {} --values lists",
                    params.len(),
                    values.len()
                ))
                .into());
            }
            let raw = load_config(&config)?;
            let dir = out.unwrap_or_else(|| {
                raw.resolve()
                    .map(|c| c.output_dir)
                    .unwrap_or_else(|_| "out".into())
            });
            let axes: Vec<SweepAxis> = params
                .into_iter()
                .zip(values)
                .map(|(path, vs)| SweepAxis {
                    path,
                    values: vs
                        .split(',')
                        .map(str::trim)
                        .filter(|v| !v.is_empty())
                        .map(String::from)
                        .collect(),
                })
                .collect();
            let rows = sweep(&raw, &axes, &dir, jobs)?;
            for r in &rows {
                println!(
                    "run {:03} [{}] final_dev_loss = {:?}",
                    r.index,
                    r.assignment.join(", "),
                    r.summary.final_dev_loss
                );
            }
            println!("wrote {} runs to {}", rows.len(), dir.display());
        }
        Command::Bo {
            config,
            space,
            budget,
            n_init,
            out,
        } => {
            let kind: SpaceKind = space.parse()?;
            let raw = load_config(&config)?;
            let dir = out.unwrap_or_else(|| {
                raw.resolve()
                    .map(|c| c.output_dir)
                    .unwrap_or_else(|_| "out".into())
            });
            let trials = bo_search(&raw, kind, budget, n_init, &dir)?;
            if let Some(best) = guided_core::hpo::best_trial(&trials) {
                println!(
                    "best trial {} x = {:?} objective = {:?}",
                    best.trial, best.x, best.objective
                );
            }
            println!("wrote {} trials to {}", trials.len(), dir.display());
        }
        Command::Gradcheck {
            optimizer,
            task,
            steps,
            tol,
        } => {
            let optimizers = parse_kinds(&optimizer, &OptimizerKind::ALL)?;
            let tasks = parse_kinds(&task, &TaskKind::ALL)?;
            let steps = if steps.is_empty() {
                DEFAULT_STEPS.to_vec()
            } else {
                steps
            };
            let cells = gradcheck(&optimizers, &tasks, &steps, tol)?;
            print!("{}", render_table(&cells));
            let failed = cells.iter().filter(|c| !c.passed()).count();
            if failed > 0 {
                return Err(HarnessError::Core(guided_core::Error::Numeric {
                    context: "gradcheck".into(),
                    detail: format!("{failed} of {} cells exceed tolerance", cells.len()),
                })
                .into());
            }
        }
        Command::Report {
            runs,
            out,
            log_loss,
            timing,
        } => {
            let r = report(&runs, &out, ReportOptions { log_loss, timing })?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "wrote {} and {}",
                out.join(REPORT_MD).display(),
                out.join(REPORT_SVG).display()
            );
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<HarnessError>()
        .map_or(1, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are validation failures; help and version are not errors.
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
