use std::fmt;
use std::path::Path;
use std::str::FromStr;

use guided_core::hpo::{bo_minimize, write_trials_csv, Dim, Scale, SearchSpace, TrialRecord};
use guided_core::numerics::Rng;

use crate::config::RawConfig;
use crate::error::{HarnessError, Result};
use crate::run::{run_experiment, write_files};

pub const TRIALS_CSV: &str = "trials.csv";

/// Static learning-rate scalars searched by BO.
pub const ALPHA_RANGE: (f64, f64) = (0.01, 10.0);
/// Static `beta1` values searched by BO and grids.
pub const BETA1_RANGE: (f64, f64) = (0.05, 0.995);

/// Which constant hyperparameters BO tunes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Alpha,
    Beta1,
    Both,
}

impl SpaceKind {
    pub fn space(self) -> SearchSpace {
        let alpha = || {
            Dim::new("alpha_scalar", ALPHA_RANGE.0, ALPHA_RANGE.1, Scale::Log).expect("valid range")
        };
        let beta1 =
            || Dim::new("beta1", BETA1_RANGE.0, BETA1_RANGE.1, Scale::Logit).expect("valid range");
        let dims = match self {
            SpaceKind::Alpha => vec![alpha()],
            SpaceKind::Beta1 => vec![beta1()],
            SpaceKind::Both => vec![alpha(), beta1()],
        };
        SearchSpace::new(dims).expect("non-empty")
    }
}

impl FromStr for SpaceKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" | "alpha_scalar" => Ok(SpaceKind::Alpha),
            "beta1" => Ok(SpaceKind::Beta1),
            "both" => Ok(SpaceKind::Both),
            other => Err(HarnessError::Invalid(format!(
                "unknown search space `{other}`"
            ))),
        }
    }
}

impl fmt::Display for SpaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceKind::Alpha => "alpha",
            SpaceKind::Beta1 => "beta1",
            SpaceKind::Both => "both",
        })
    }
}

/// Config with the guided parameters switched off and the searched
/// values pinned as constants.
pub fn static_config(
    base: &RawConfig,
    space: &SearchSpace,
    x: &[f64],
    seed: u64,
) -> Result<RawConfig> {
    let mut raw = base.clone();
    raw.set("guided.params", "[]")?;
    raw.set("guided.meta_lr", "0.0")?;
    for (d, v) in space.dims().iter().zip(x) {
        let path = match d.name.as_str() {
            "alpha_scalar" => "guided.init_alpha",
            "beta1" => "optimizer.beta1",
            other => return Err(HarnessError::Invalid(format!("cannot pin `{other}`"))),
        };
        raw.set(path, &format!("{v:?}"))?;
    }
    raw.set("task.seed", &seed.to_string())?;
    Ok(raw)
}

/// BO over constant hyperparameters; the objective is the final dev loss of
/// an unguided run. Trial `k` runs in `out_root/trial_<k>` with the seed
/// derived from the base seed and `k`. Runs that fail numerically count as
/// failed trials.
pub fn bo_search(
    base: &RawConfig,
    kind: SpaceKind,
    budget: usize,
    n_init: usize,
    out_root: &Path,
) -> Result<Vec<TrialRecord>> {
    let resolved = base.resolve()?;
    if resolved.train.eval_every == 0 {
        return Err(HarnessError::Invalid(
            "BO needs train.eval_every > 0 to score runs".into(),
        ));
    }
    let space = kind.space();
    let mut fatal: Option<HarnessError> = None;
    let mut trial = 0usize;
    let trials = bo_minimize(
        |x, seed| {
            trial += 1;
            if fatal.is_some() {
                return f64::NAN;
            }
            let attempt = static_config(base, &space, x, seed)
                .and_then(|raw| Ok(raw.resolve()?))
                .and_then(|cfg| run_experiment(&cfg, &out_root.join(format!("trial_{trial:03}"))));
            match attempt {
                Ok(outcome) => outcome.summary.final_dev_loss.unwrap_or(f64::NAN),
                Err(HarnessError::Core(guided_core::Error::Numeric { .. })) => f64::NAN,
                Err(e) => {
                    fatal = Some(e);
                    f64::NAN
                }
            }
        },
        &space,
        budget,
        n_init,
        &Rng::new(resolved.task.seed, 0),
    )?;
    if let Some(e) = fatal {
        return Err(e);
    }
    let mut csv = Vec::new();
    write_trials_csv(&space, &trials, &mut csv)
        .map_err(|e| HarnessError::io(out_root.join(TRIALS_CSV), e))?;
    write_files(out_root, &[(TRIALS_CSV, csv)])?;
    Ok(trials)
}

#[cfg(test)]
mod tests {
    use super::*;
    use guided_core::hpo::trial_seed;
    use std::fs;

    const BASE: &str = "[task]\nkind = \"quadratic\"\ndim = 4\nn_train = 320\nbatch_size = 16\nseed = 9\n[optimizer]\nkind = \"adam\"\nbase_lr = 0.05\n[guided]\nparams = [\"beta1\"]\nmeta_lr = 0.01\n[train]\nsteps = 30\neval_every = 10\n";

    #[test]
    fn static_config_pins_values_and_disables_guidance() {
        let raw = RawConfig::parse(BASE).unwrap();
        let space = SpaceKind::Both.space();
        let cfg = static_config(&raw, &space, &[0.5, 0.8], 77)
            .unwrap()
            .resolve()
            .unwrap();
        assert!(cfg.guided.params.is_empty());
        assert_eq!(cfg.guided.meta_lr, 0.0);
        assert_eq!(cfg.guided.init_alpha, 0.5);
        assert_eq!(cfg.optimizer.beta1, 0.8);
        assert_eq!(cfg.task.seed, 77);
    }

    #[test]
    fn budget_many_trials_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawConfig::parse(BASE).unwrap();
        let trials = bo_search(&raw, SpaceKind::Beta1, 5, 3, dir.path()).unwrap();
        assert_eq!(trials.len(), 5);
        for t in &trials {
            assert_eq!(t.seed, trial_seed(9, t.trial));
            assert!(dir
                .path()
                .join(format!("trial_{:03}", t.trial))
                .join("run.csv")
                .exists());
            assert!((BETA1_RANGE.0..=BETA1_RANGE.1).contains(&t.x[0]));
        }
        let csv = fs::read_to_string(dir.path().join(TRIALS_CSV)).unwrap();
        assert!(csv.starts_with("trial,x_beta1,objective,seed\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn space_names_parse() {
        for k in [SpaceKind::Alpha, SpaceKind::Beta1, SpaceKind::Both] {
            assert_eq!(k.to_string().parse::<SpaceKind>().unwrap(), k);
        }
        assert_eq!("gamma".parse::<SpaceKind>().unwrap_err().exit_code(), 1);
    }
}
