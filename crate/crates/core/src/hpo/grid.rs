use std::cmp::Ordering;

use super::space::SearchSpace;
use crate::error::{Error, Result};

/// Outcome of an exhaustive grid evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub best_x: Vec<f64>,
    pub best_y: f64,
    /// Every `(point, value)` pair in lexicographic point order.
    pub table: Vec<(Vec<f64>, f64)>,
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// NaN ranks after every number.
fn value_key(y: f64) -> f64 {
    if y.is_nan() {
        f64::INFINITY
    } else {
        y
    }
}

impl GridResult {
    /// Select the minimum from a table given in any order. Ties go to the
    /// lexicographically smallest point, so the result does not depend on
    /// the order in which points were evaluated.
    pub fn from_table(mut table: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::Contract("empty grid table".into()));
        }
        table.sort_by(|a, b| lex_cmp(&a.0, &b.0));
        let mut best = 0;
        for (i, (_, y)) in table.iter().enumerate() {
            if value_key(*y) < value_key(table[best].1) {
                best = i;
            }
        }
        Ok(GridResult {
            best_x: table[best].0.clone(),
            best_y: table[best].1,
            table,
        })
    }
}

/// Points of the scaled grid in natural coordinates, lexicographic order.
pub fn grid_points(space: &SearchSpace, points_per_dim: usize) -> Result<Vec<Vec<f64>>> {
    if !(1..=2).contains(&space.len()) {
        return Err(Error::Contract(format!(
            "grid search supports 1 or 2 dimensions, got {}",
            space.len()
        )));
    }
    if points_per_dim < 3 {
        return Err(Error::Contract(format!(
            "need at least 3 points per dimension, got {points_per_dim}"
        )));
    }
    Ok(space
        .unit_grid(points_per_dim)
        .iter()
        .map(|u| space.from_unit(u))
        .collect())
}

/// Evaluate `objective` at every grid point and return the minimizer.
pub fn grid_oracle<F>(
    mut objective: F,
    space: &SearchSpace,
    points_per_dim: usize,
) -> Result<GridResult>
where
    F: FnMut(&[f64]) -> f64,
{
    let table = grid_points(space, points_per_dim)?
        .into_iter()
        .map(|x| {
            let y = objective(&x);
            (x, y)
        })
        .collect();
    GridResult::from_table(table)
}
