use std::fmt::Write as _;

use guided_core::guided::{HyperName, MetaConfig, TrainConfig, Trainer};
use guided_core::hpo::fd_hypergrad_oracle;
use guided_core::models::{make_task, Task, TaskKind, TaskSpec};
use guided_core::numerics::Rng;
use guided_core::optim::OptimizerKind;

use crate::error::Result;

/// Steps checked when none are given.
pub const DEFAULT_STEPS: [u64; 4] = [1, 2, 10, 100];
/// Finite-difference step on the raw scale; the estimate is Richardson
/// extrapolated from `h` and `h / 2`.
pub const FD_STEP: f64 = 1e-3;

pub fn default_tolerance(kind: OptimizerKind) -> f64 {
    match kind {
        OptimizerKind::Adafactor => 1e-4,
        _ => 1e-5,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub name: HyperName,
    pub analytic: f64,
    pub finite_difference: f64,
    pub rel_err: f64,
}

/// One (optimizer, task, step) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckCell {
    pub optimizer: OptimizerKind,
    pub task: TaskKind,
    pub step: u64,
    pub tolerance: f64,
    /// Empty when the cell was skipped as non-smooth.
    pub comparisons: Vec<Comparison>,
    pub skipped: bool,
}

impl GradcheckCell {
    pub fn worst(&self) -> Option<f64> {
        self.comparisons.iter().map(|c| c.rel_err).reduce(f64::max)
    }

    pub fn passed(&self) -> bool {
        self.skipped || self.worst().is_some_and(|w| w <= self.tolerance)
    }
}

/// Relative error with one exception: an analytic value that is exactly
/// zero (a structural zero, e.g. the first Adam step's `beta1` tangent) is
/// accepted when the difference quotient is within 1e-10 of zero, scaled by
/// the loss.
pub fn relative_error(analytic: f64, fd: f64, loss: f64) -> f64 {
    if analytic == 0.0 && fd.abs() <= 1e-10 * loss.abs().max(1.0) {
        return 0.0;
    }
    let scale = analytic.abs().max(fd.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - fd).abs() / scale
    }
}

fn check_task(kind: TaskKind) -> Result<Task> {
    let spec = match kind {
        TaskKind::Quadratic => TaskSpec::new(kind, 6, 16 * 8, 16, 0.5),
        TaskKind::Logreg => TaskSpec::new(kind, 6, 16 * 8, 16, 1.0),
        TaskKind::Mlp => {
            let mut s = TaskSpec::new(kind, 5, 16 * 8, 16, 0.1);
            s.hidden = 4;
            s
        }
    };
    Ok(make_task(&spec, &Rng::new(17, 0))?)
}

/// Compare analytic hypergradients against finite differences at `step`
/// of a guided run in which both hyperparameters are being learned.
pub fn check_cell(
    optimizer: OptimizerKind,
    task_kind: TaskKind,
    step: u64,
    tolerance: f64,
) -> Result<GradcheckCell> {
    let task = check_task(task_kind)?;
    let mut cfg = TrainConfig::new(optimizer, step.max(1));
    cfg.hypers.base_lr = 0.01;
    cfg.meta = MetaConfig::guiding(&[HyperName::AlphaScalar, HyperName::Beta1], 1e-3);
    let mut trainer = Trainer::new(&task, &cfg, &Rng::new(23, 0))?;
    for _ in 1..step {
        trainer.step()?;
    }
    let snap = trainer.snapshot()?;
    let h = snap.guided.apply(&snap.base_hypers);
    let (loss, out) = snap.replay(&task, &h, true)?;
    let mut cell = GradcheckCell {
        optimizer,
        task: task_kind,
        step,
        tolerance,
        comparisons: Vec::new(),
        skipped: out.clip_boundary,
    };
    if cell.skipped {
        return Ok(cell);
    }
    let analytic = snap.hypergradient(&task)?;
    for name in HyperName::ALL {
        let a = analytic.get(name)?;
        let coarse = fd_hypergrad_oracle(&task, &snap, name, FD_STEP)?;
        let fine = fd_hypergrad_oracle(&task, &snap, name, FD_STEP / 2.0)?;
        let fd = (4.0 * fine - coarse) / 3.0;
        cell.comparisons.push(Comparison {
            name,
            analytic: a,
            finite_difference: fd,
            rel_err: relative_error(a, fd, loss),
        });
    }
    Ok(cell)
}

/// Run the whole matrix. `tolerance = None` uses [`default_tolerance`].
pub fn gradcheck(
    optimizers: &[OptimizerKind],
    tasks: &[TaskKind],
    steps: &[u64],
    tolerance: Option<f64>,
) -> Result<Vec<GradcheckCell>> {
    let mut cells = Vec::new();
    for &o in optimizers {
        for &t in tasks {
            for &s in steps {
                cells.push(check_cell(
                    o,
                    t,
                    s,
                    tolerance.unwrap_or_else(|| default_tolerance(o)),
                )?);
            }
        }
    }
    Ok(cells)
}

pub fn render_table(cells: &[GradcheckCell]) -> String {
    let mut s = String::from("optimizer  task       step  worst_rel_err  tolerance  status\n");
    for c in cells {
        let (worst, status) = if c.skipped {
            ("-".to_string(), "skipped: non-smooth")
        } else {
            (
                format!("{:.3e}", c.worst().unwrap_or(f64::NAN)),
                if c.passed() { "pass" } else { "FAIL" },
            )
        };
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:>4}  {:>13}  {:>9.1e}  {}",
            c.optimizer.name(),
            c.task.name(),
            c.step,
            worst,
            c.tolerance,
            status
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_quadratic_cells_are_tight() {
        let cells = gradcheck(
            &[OptimizerKind::Adam],
            &[TaskKind::Quadratic],
            &DEFAULT_STEPS,
            Some(1e-6),
        )
        .unwrap();
        assert_eq!(cells.len(), 4);
        for c in &cells {
            assert!(c.passed(), "{}", render_table(&cells));
        }
        // The first step's beta1 hypergradient is a structural zero.
        assert_eq!(cells[0].comparisons[1].analytic, 0.0);
    }

    #[test]
    fn zero_tolerance_fails() {
        let cells =
            gradcheck(&[OptimizerKind::Lamb], &[TaskKind::Logreg], &[2], Some(0.0)).unwrap();
        assert!(!cells[0].passed());
        assert!(render_table(&cells).contains("FAIL"));
    }

    #[test]
    fn adafactor_clip_boundary_is_skipped() {
        // The quadratic task has a single vector layer, whose first
        // Adafactor update always sits exactly at the clip threshold.
        let cell = check_cell(OptimizerKind::Adafactor, TaskKind::Quadratic, 1, 1e-4).unwrap();
        assert!(cell.skipped && cell.passed());
        assert!(render_table(&[cell]).contains("skipped: non-smooth"));
    }

    #[test]
    fn relative_error_rules() {
        assert_eq!(relative_error(0.0, 1e-12, 3.0), 0.0);
        assert_eq!(relative_error(0.0, 1e-3, 3.0), 1.0);
        assert!((relative_error(1.0, 1.1, 0.0) - 0.1 / 1.1).abs() < 1e-15);
    }
}
