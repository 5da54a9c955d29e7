//! Baselines and oracles: GP-based Bayesian optimization over constant
//! hyperparameters, exhaustive grids and finite-difference hypergradients.

mod bo;
mod fd;
mod gp;
mod grid;
mod space;

pub use bo::{
    best_trial, bo_minimize, halton_point, incumbents, trial_seed, trials_csv_header,
    write_trials_csv, TrialRecord, EI_POINTS_PER_DIM,
};
pub use fd::fd_hypergrad_oracle;
pub use gp::{
    expected_improvement, expected_improvement_from, gp_posterior, GpModel, Kernel,
    LENGTH_SCALE_GRID, NOISE_FRACTION_GRID,
};
pub use grid::{grid_oracle, grid_points, GridResult};
pub use space::{Dim, Scale, SearchSpace};
