use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use guided_core::numerics::derive_seed;
use rayon::prelude::*;

use crate::config::RawConfig;
use crate::error::{HarnessError, Result};
use crate::run::{run_experiment, write_files, ReportSummary};

pub const SWEEP_CSV: &str = "sweep.csv";

/// One swept config field and its values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub path: String,
    pub values: Vec<String>,
}

/// One finished sweep run.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub index: usize,
    pub assignment: Vec<String>,
    pub seed: u64,
    pub dir: PathBuf,
    pub summary: ReportSummary,
}

fn cross_product(axes: &[SweepAxis]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = vec![Vec::new()];
    for axis in axes {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                axis.values.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v.clone());
                    p
                })
            })
            .collect();
    }
    out
}

/// Run one experiment per point of the cross product of `axes` (first axis
/// slowest). Run `i` gets seed `derive_seed(base_seed, [i])` and directory
/// `out_root/run_<i>`. Up to `jobs` runs execute at once; `sweep.csv` is
/// written once all of them have finished, in sweep order.
pub fn sweep(
    base: &RawConfig,
    axes: &[SweepAxis],
    out_root: &Path,
    jobs: usize,
) -> Result<Vec<SweepRow>> {
    if axes.is_empty() {
        return Err(HarnessError::Invalid(
            "sweep needs at least one --param".into(),
        ));
    }
    for axis in axes {
        if axis.values.is_empty() {
            return Err(HarnessError::Invalid(format!(
                "no values given for `{}`",
                axis.path
            )));
        }
    }
    let base_seed = base.resolve()?.task.seed;
    // Validate every point before starting any run.
    let mut configs = Vec::new();
    for (i, assignment) in cross_product(axes).into_iter().enumerate() {
        let mut raw = base.clone();
        for (axis, value) in axes.iter().zip(&assignment) {
            raw.set(&axis.path, value)?;
        }
        let seed = derive_seed(base_seed, &[i as u64]);
        raw.set("task.seed", &seed.to_string())?;
        let cfg = raw.resolve()?;
        configs.push((i, assignment, seed, cfg));
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Invalid(format!("cannot start worker threads: {e}")))?;
    let results: Vec<Result<SweepRow>> = pool.install(|| {
        configs
            .into_par_iter()
            .map(|(index, assignment, seed, cfg)| {
                let dir = out_root.join(format!("run_{index:03}"));
                let outcome = run_experiment(&cfg, &dir)?;
                Ok(SweepRow {
                    index,
                    assignment,
                    seed,
                    dir,
                    summary: outcome.summary,
                })
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_files(
        out_root,
        &[(SWEEP_CSV, sweep_csv(axes, &rows).into_bytes())],
    )?;
    Ok(rows)
}

pub fn sweep_csv(axes: &[SweepAxis], rows: &[SweepRow]) -> String {
    let num = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    let mut s = String::from("index");
    for a in axes {
        s.push(',');
        s.push_str(&a.path);
    }
    s.push_str(",seed,best_dev_loss,final_dev_loss,steps_to_target,total_steps,dir\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.index,
            r.assignment.join(","),
            r.seed,
            num(r.summary.best_dev_loss),
            num(r.summary.final_dev_loss),
            r.summary
                .steps_to_target
                .map(|v| v.to_string())
                .unwrap_or_default(),
            r.summary.total_steps,
            r.dir
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default()
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::RUN_CSV;
    use std::fs;

    const BASE: &str = "[task]\nkind = \"quadratic\"\ndim = 4\nn_train = 320\nbatch_size = 16\nseed = 5\n[optimizer]\nkind = \"adam\"\nbase_lr = 0.05\n[guided]\nparams = [\"beta1\"]\n[train]\nsteps = 40\neval_every = 10\n";

    fn axis(path: &str, values: &[&str]) -> SweepAxis {
        SweepAxis {
            path: path.into(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    #[test]
    fn one_run_per_value() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawConfig::parse(BASE).unwrap();
        let rows = sweep(
            &raw,
            &[axis("guided.meta_lr", &["3e-5", "3e-4", "3e-3", "3e-2"])],
            dir.path(),
            2,
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(
            rows.iter().map(|r| r.index).collect::<Vec<_>>(),
            vec![0, 1, 2, 3]
        );
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.seed, derive_seed(5, &[i as u64]));
            assert!(r.dir.join(RUN_CSV).exists());
        }
        let csv = fs::read_to_string(dir.path().join(SWEEP_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with("index,guided.meta_lr,seed,"));
    }

    #[test]
    fn cross_product_of_two_axes() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawConfig::parse(BASE).unwrap();
        let axes = [
            axis("guided.init_beta1", &["0.1", "0.5", "0.9"]),
            axis("guided.meta_lr", &["3e-3"]),
        ];
        let rows = sweep(&raw, &axes, dir.path(), 3).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(
            rows[2].assignment,
            vec!["0.9".to_string(), "3e-3".to_string()]
        );
    }

    #[test]
    fn jobs_do_not_change_outputs() {
        let raw = RawConfig::parse(BASE).unwrap();
        let axes = [axis("guided.meta_lr", &["1e-3", "1e-2"])];
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        sweep(&raw, &axes, a.path(), 1).unwrap();
        sweep(&raw, &axes, b.path(), 4).unwrap();
        for f in [SWEEP_CSV, "run_001/run.csv"] {
            assert_eq!(
                fs::read(a.path().join(f)).unwrap(),
                fs::read(b.path().join(f)).unwrap()
            );
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawConfig::parse(BASE).unwrap();
        assert!(sweep(&raw, &[axis("guided.meta_lr", &[])], dir.path(), 1).is_err());
        assert!(sweep(&raw, &[axis("guided.nope", &["1"])], dir.path(), 1).is_err());
        assert!(sweep(&raw, &[], dir.path(), 1).is_err());
        let err = sweep(&raw, &[axis("guided.meta_lr", &["-1"])], dir.path(), 1).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(!dir.path().join("run_000").exists());
    }
}
