use std::io::{self, Write};

use super::gp::{expected_improvement_from, GpModel};
use super::space::SearchSpace;
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng};

/// EI is maximized over an even grid with at least this many points per
/// unit-scaled dimension.
pub const EI_POINTS_PER_DIM: usize = 512;

const STREAM_HALTON_SHIFT: u64 = 11;
const HALTON_BASES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// 1-based trial index.
    pub trial: usize,
    pub x: Vec<f64>,
    /// Objective value; the penalty when the objective was not finite.
    pub objective: f64,
    /// Seed handed to the objective for this trial.
    pub seed: u64,
    pub failed: bool,
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    out
}

/// Point `index` of a Halton sequence with a seeded Cranley-Patterson shift.
pub fn halton_point(index: u64, dims: usize, shift: &[f64]) -> Vec<f64> {
    (0..dims)
        .map(|d| {
            let v = radical_inverse(index + 1, HALTON_BASES[d % HALTON_BASES.len()]) + shift[d];
            v - v.floor()
        })
        .collect()
}

/// Seed for trial `trial` of a search started from `base`.
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    derive_seed(base, &[trial as u64])
}

fn ei_grid(space: &SearchSpace) -> Vec<Vec<f64>> {
    space.unit_grid(EI_POINTS_PER_DIM)
}

/// Next point in unit coordinates: the EI maximizer over the dense grid,
/// first in grid order on ties. When EI vanishes everywhere the point of
/// largest posterior variance is taken instead.
fn propose(model: &GpModel, grid: &[Vec<f64>], incumbent: f64) -> Vec<f64> {
    let mut best_ei = (f64::NEG_INFINITY, 0usize);
    let mut best_var = (f64::NEG_INFINITY, 0usize);
    for (i, u) in grid.iter().enumerate() {
        let (mean, var) = model.posterior(u);
        let ei = expected_improvement_from(mean, var.sqrt(), incumbent);
        if ei > best_ei.0 {
            best_ei = (ei, i);
        }
        if var > best_var.0 {
            best_var = (var, i);
        }
    }
    if best_ei.0 > 0.0 {
        grid[best_ei.1].clone()
    } else {
        grid[best_var.1].clone()
    }
}

/// Sequential GP-EI minimization.
///
/// The first `n_init` points come from a shifted Halton sequence; each later
/// trial refits the GP (kernel chosen by marginal likelihood) and evaluates
/// the EI maximizer. The objective receives the point in natural
/// coordinates and the trial seed. A non-finite objective is recorded as
/// the worst value so far plus one (or 1 if nothing finite was seen yet).
pub fn bo_minimize<F>(
    mut objective: F,
    space: &SearchSpace,
    budget: usize,
    n_init: usize,
    rng: &Rng,
) -> Result<Vec<TrialRecord>>
where
    F: FnMut(&[f64], u64) -> f64,
{
    if !(n_init >= 2 && budget >= n_init) {
        return Err(Error::Contract(format!(
            "need budget >= n_init >= 2, got budget {budget}, n_init {n_init}"
        )));
    }
    let dims = space.len();
    let mut shift_rng = rng.fork(STREAM_HALTON_SHIFT);
    let shift: Vec<f64> = (0..dims).map(|_| shift_rng.uniform()).collect();
    let grid = if budget > n_init {
        ei_grid(space)
    } else {
        Vec::new()
    };

    let mut trials: Vec<TrialRecord> = Vec::with_capacity(budget);
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(budget);
    for k in 0..budget {
        let u = if k < n_init {
            halton_point(k as u64, dims, &shift)
        } else {
            let ys: Vec<f64> = trials.iter().map(|t| t.objective).collect();
            let model = GpModel::fit_by_marginal_likelihood(units.clone(), ys)?;
            let incumbent = trials
                .iter()
                .map(|t| t.objective)
                .fold(f64::INFINITY, f64::min);
            propose(&model, &grid, incumbent)
        };
        let x = space.from_unit(&u);
        let seed = trial_seed(rng.seed(), k + 1);
        let y = objective(&x, seed);
        let (objective_value, failed) = if y.is_finite() {
            (y, false)
        } else {
            let worst = trials
                .iter()
                .map(|t| t.objective)
                .fold(f64::NEG_INFINITY, f64::max);
            (if worst.is_finite() { worst + 1.0 } else { 1.0 }, true)
        };
        trials.push(TrialRecord {
            trial: k + 1,
            x,
            objective: objective_value,
            seed,
            failed,
        });
        units.push(u);
    }
    Ok(trials)
}

/// Running minimum of the objective after each trial.
pub fn incumbents(trials: &[TrialRecord]) -> Vec<f64> {
    let mut best = f64::INFINITY;
    trials
        .iter()
        .map(|t| {
            best = best.min(t.objective);
            best
        })
        .collect()
}

/// Lowest-objective trial, earliest on ties.
pub fn best_trial(trials: &[TrialRecord]) -> Option<&TrialRecord> {
    trials
        .iter()
        .fold(None, |best: Option<&TrialRecord>, t| match best {
            Some(b) if b.objective <= t.objective => Some(b),
            _ => Some(t),
        })
}

/// Header of the trial-history CSV for `space`.
pub fn trials_csv_header(space: &SearchSpace) -> String {
    let mut cols = vec!["trial".to_string()];
    cols.extend(space.dims().iter().map(|d| format!("x_{}", d.name)));
    cols.push("objective".into());
    cols.push("seed".into());
    cols.join(",")
}

pub fn write_trials_csv<W: Write>(
    space: &SearchSpace,
    trials: &[TrialRecord],
    mut out: W,
) -> io::Result<()> {
    writeln!(out, "{}", trials_csv_header(space))?;
    for t in trials {
        let xs: Vec<String> = t.x.iter().map(|v| format!("{v:?}")).collect();
        writeln!(
            out,
            "{},{},{:?},{}",
            t.trial,
            xs.join(","),
            t.objective,
            t.seed
        )?;
    }
    Ok(())
}
