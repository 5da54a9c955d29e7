use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use guided_core::guided::RunLog;

use crate::error::{HarnessError, Result};
use crate::run::{read_wall_clock, steps_to_target, write_files, ReportSummary, RUN_CSV};
use crate::svg::{self, Panel, Series};

pub const REPORT_MD: &str = "report.md";
pub const REPORT_SVG: &str = "report.svg";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReportOptions {
    /// Plot dev loss on a log axis when every value is positive.
    pub log_loss: bool,
    /// Include measured wall-clock; off by default because it breaks
    /// byte-identical reports.
    pub timing: bool,
}

#[derive(Debug, Clone)]
pub struct RunEntry {
    pub label: String,
    pub dir: PathBuf,
    pub log: RunLog,
}

/// One `--runs` directory: a single run or a sweep/BO directory whose
/// subdirectories each hold a run.
#[derive(Debug, Clone)]
pub struct Group {
    pub name: String,
    pub runs: Vec<RunEntry>,
    pub summary: ReportSummary,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub groups: Vec<Group>,
    pub warnings: Vec<String>,
    pub markdown: String,
    pub svg: String,
}

fn display_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.join(RUN_CSV).is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut subs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
        if path.join(RUN_CSV).is_file() {
            subs.push(path);
        }
    }
    subs.sort();
    Ok(subs)
}

fn load(dir: &Path, label: &str, warnings: &mut Vec<String>) -> Option<RunLog> {
    let path = dir.join(RUN_CSV);
    let file = match fs::File::open(&path) {
        Ok(f) => f,
        Err(e) => {
            warnings.push(format!("skipped `{label}`: cannot read {RUN_CSV}: {e}"));
            return None;
        }
    };
    match RunLog::read_csv(BufReader::new(file)) {
        Ok(log) if log.is_empty() => {
            warnings.push(format!("skipped `{label}`: {RUN_CSV} has no rows"));
            None
        }
        Ok(log) => Some(log),
        Err(e) => {
            warnings.push(format!("skipped `{label}`: malformed {RUN_CSV}: {e}"));
            None
        }
    }
}

fn min_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    values.flatten().reduce(f64::min)
}

fn summarize(runs: &[RunEntry], target: Option<f64>) -> ReportSummary {
    let wall = runs
        .iter()
        .map(|r| read_wall_clock(&r.dir))
        .try_fold(0.0, |acc, w| w.map(|w| acc + w));
    ReportSummary {
        best_dev_loss: min_opt(runs.iter().map(|r| r.log.best_dev_loss())),
        final_dev_loss: min_opt(runs.iter().map(|r| r.log.final_dev_loss())),
        steps_to_target: target
            .and_then(|t| runs.iter().filter_map(|r| steps_to_target(&r.log, t)).min()),
        target,
        total_runs: runs.len(),
        total_steps: runs.iter().map(|r| r.log.len() as u64).sum(),
        wall_clock_secs: if runs.is_empty() { None } else { wall },
    }
}

fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "-".into())
}

fn markdown(groups: &[Group], warnings: &[String], opts: ReportOptions) -> String {
    let mut s = String::from("# Run report\n\n");
    if let (Some(first), Some(t)) = (
        groups.first(),
        groups.first().and_then(|g| g.summary.target),
    ) {
        let _ = writeln!(
            s,
            "Steps to target: first eval step with dev loss <= {} (best final dev loss of `{}`).\n",
            num(Some(t)),
            first.name
        );
    }
    s.push_str("| group | runs | best dev loss | final dev loss | steps to target | total steps |");
    if opts.timing {
        s.push_str(" wall-clock (s) |");
    }
    s.push_str("\n|---|---:|---:|---:|---:|---:|");
    if opts.timing {
        s.push_str("---:|");
    }
    s.push('\n');
    let reached = |r: &ReportSummary| match (r.target, r.steps_to_target) {
        (None, _) => "-".to_string(),
        (Some(_), Some(step)) => step.to_string(),
        (Some(_), None) => "unreached".to_string(),
    };
    for g in groups {
        let r = &g.summary;
        let _ = write!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            g.name,
            r.total_runs,
            num(r.best_dev_loss),
            num(r.final_dev_loss),
            reached(r),
            r.total_steps
        );
        if opts.timing {
            let _ = write!(
                s,
                " {} |",
                r.wall_clock_secs
                    .map(|w| format!("{w:.2}"))
                    .unwrap_or_else(|| "-".into())
            );
        }
        s.push('\n');
    }

    s.push_str("\n## Runs\n\n| run | best dev loss | final dev loss | final alpha_scalar | final beta1 | steps |\n|---|---:|---:|---:|---:|---:|\n");
    for run in groups.iter().flat_map(|g| &g.runs) {
        let last = run.log.last();
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            run.label,
            num(run.log.best_dev_loss()),
            num(run.log.final_dev_loss()),
            num(last.map(|r| r.alpha_scalar)),
            num(last.map(|r| r.beta1)),
            run.log.len()
        );
    }
    if !warnings.is_empty() {
        s.push_str("\n## Warnings\n\n");
        for w in warnings {
            let _ = writeln!(s, "- {w}");
        }
    }
    s
}

fn chart(groups: &[Group], opts: ReportOptions) -> String {
    let runs: Vec<&RunEntry> = groups.iter().flat_map(|g| &g.runs).collect();
    let series = |pick: &dyn Fn(&RunLog) -> Vec<(f64, f64)>| -> Vec<Series> {
        runs.iter()
            .enumerate()
            .map(|(i, r)| Series {
                label: r.label.clone(),
                color_index: i,
                points: pick(&r.log),
            })
            .filter(|s| !s.points.is_empty())
            .collect()
    };
    let legend = series(&|_| vec![(0.0, 0.0)]);
    let mut panels = vec![Panel {
        title: "dev loss vs step".into(),
        series: series(&|l| l.dev_losses().map(|(s, d)| (s as f64, d)).collect()),
        log_y: opts.log_loss,
    }];
    let alpha = series(&|l| {
        l.records
            .iter()
            .filter(|r| r.raw_alpha.is_some())
            .map(|r| (r.step as f64, r.alpha_scalar))
            .collect()
    });
    if !alpha.is_empty() {
        panels.push(Panel {
            title: "alpha_scalar vs step".into(),
            series: alpha,
            log_y: false,
        });
    }
    let beta1 = series(&|l| {
        l.records
            .iter()
            .filter(|r| r.raw_beta1.is_some())
            .map(|r| (r.step as f64, r.beta1))
            .collect()
    });
    if !beta1.is_empty() {
        panels.push(Panel {
            title: "beta1 vs step".into(),
            series: beta1,
            log_y: false,
        });
    }
    svg::render(&panels, &legend)
}

/// Build the report for `run_dirs` without writing anything.
///
/// Steps-to-target is measured against the best final dev loss of the
/// first group, so later groups read as "steps to match the first".
pub fn build_report(run_dirs_in: &[PathBuf], opts: ReportOptions) -> Result<Report> {
    if run_dirs_in.is_empty() {
        return Err(HarnessError::Invalid(
            "report needs at least one run directory".into(),
        ));
    }
    let mut warnings = Vec::new();
    let mut loaded: Vec<(String, Vec<RunEntry>)> = Vec::new();
    for dir in run_dirs_in {
        let name = display_name(dir);
        let dirs = run_dirs(dir)?;
        if dirs.is_empty() {
            warnings.push(format!("skipped `{name}`: no {RUN_CSV} found"));
        }
        let mut runs = Vec::new();
        for d in dirs {
            let label = if d == *dir {
                name.clone()
            } else {
                format!("{name}/{}", display_name(&d))
            };
            if let Some(log) = load(&d, &label, &mut warnings) {
                runs.push(RunEntry { label, dir: d, log });
            }
        }
        loaded.push((name, runs));
    }
    if loaded.iter().all(|(_, runs)| runs.is_empty()) {
        return Err(HarnessError::Invalid(format!(
            "no readable {RUN_CSV} in the given directories: {}",
            warnings.join("; ")
        )));
    }
    let target = loaded
        .iter()
        .find(|(_, r)| !r.is_empty())
        .and_then(|(_, runs)| min_opt(runs.iter().map(|r| r.log.final_dev_loss())));
    let groups: Vec<Group> = loaded
        .into_iter()
        .map(|(name, runs)| Group {
            summary: summarize(&runs, target),
            name,
            runs,
        })
        .collect();
    let markdown = markdown(&groups, &warnings, opts);
    let svg = chart(&groups, opts);
    Ok(Report {
        groups,
        warnings,
        markdown,
        svg,
    })
}

/// Build the report and write `report.md` and `report.svg` into `out`.
pub fn report(run_dirs: &[PathBuf], out: &Path, opts: ReportOptions) -> Result<Report> {
    let r = build_report(run_dirs, opts)?;
    write_files(
        out,
        &[
            (REPORT_MD, r.markdown.clone().into_bytes()),
            (REPORT_SVG, r.svg.clone().into_bytes()),
        ],
    )?;
    Ok(r)
}
