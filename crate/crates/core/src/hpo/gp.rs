use nalgebra::{Cholesky, DMatrix, DVector};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Squared-exponential kernel with one length-scale per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut r2 = 0.0;
        for ((x, y), l) in a.iter().zip(b).zip(&self.length_scales) {
            let d = (x - y) / l;
            r2 += d * d;
        }
        self.signal_var * (-0.5 * r2).exp()
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.length_scales.len() != dim {
            return Err(Error::Gp(format!(
                "kernel has {} length-scales for {dim}-dimensional inputs",
                self.length_scales.len()
            )));
        }
        let ok = self.length_scales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_var > 0.0
            && self.signal_var.is_finite()
            && self.noise_var >= 0.0
            && self.noise_var.is_finite();
        if !ok {
            return Err(Error::Gp(format!(
                "invalid kernel hyperparameters {self:?}"
            )));
        }
        Ok(())
    }
}

/// Length-scales tried when fitting by marginal likelihood (unit coordinates).
pub const LENGTH_SCALE_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.35, 0.5, 1.0, 2.0];
/// Noise variances tried, as fractions of the signal variance.
pub const NOISE_FRACTION_GRID: [f64; 4] = [1e-6, 1e-4, 1e-2, 1e-1];

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;
const PIVOT_TOL: f64 = 1e-13;

/// Exact GP regression on a fixed set of observations.
#[derive(Debug, Clone)]
pub struct GpModel {
    xs: Vec<Vec<f64>>,
    ys: Vec<f64>,
    kernel: Kernel,
    prior_mean: f64,
    /// Lower Cholesky factor of `K + (noise + jitter) I`.
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Lower Cholesky factor, or `None` when a pivot loses almost all of its
/// diagonal entry.
fn cholesky(a: DMatrix<f64>) -> Option<DMatrix<f64>> {
    let diag = a.diagonal();
    let l = Cholesky::new(a)?.unpack();
    let ok = (0..l.nrows()).all(|i| {
        let p = l[(i, i)] * l[(i, i)];
        p.is_finite() && p > PIVOT_TOL * diag[i]
    });
    ok.then_some(l)
}

impl GpModel {
    /// Condition on `(xs, ys)`. If the kernel matrix is not numerically
    /// positive definite, diagonal jitter is escalated tenfold from 1e-10 up
    /// to 1e-4 (relative to the signal variance) before giving up.
    pub fn fit(xs: Vec<Vec<f64>>, ys: Vec<f64>, kernel: Kernel, prior_mean: f64) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Gp("need at least one observation".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::Gp(format!(
                "{} inputs but {} targets",
                xs.len(),
                ys.len()
            )));
        }
        let dim = xs[0].len();
        if xs.iter().any(|x| x.len() != dim) {
            return Err(Error::Gp("inputs have mixed dimensions".into()));
        }
        if ys.iter().any(|y| !y.is_finite()) || !prior_mean.is_finite() {
            return Err(Error::Gp("targets must be finite".into()));
        }
        kernel.validate(dim)?;

        let n = xs.len();
        let k = DMatrix::from_fn(n, n, |i, j| kernel.eval(&xs[i], &xs[j]));
        let mut jitter = 0.0;
        loop {
            let a = &k + DMatrix::identity(n, n) * (kernel.noise_var + jitter);
            if let Some(chol) = cholesky(a) {
                let resid = DVector::from_iterator(n, ys.iter().map(|y| y - prior_mean));
                let z = chol.solve_lower_triangular(&resid).expect("nonzero pivots");
                let alpha = chol.tr_solve_lower_triangular(&z).expect("nonzero pivots");
                return Ok(GpModel {
                    xs,
                    ys,
                    kernel,
                    prior_mean,
                    chol,
                    alpha,
                    jitter,
                });
            }
            jitter = if jitter == 0.0 {
                JITTER_START * kernel.signal_var
            } else {
                jitter * 10.0
            };
            if jitter > JITTER_MAX * kernel.signal_var * (1.0 + 1e-9) {
                return Err(Error::Gp(format!(
                    "kernel matrix of {n} points is not positive definite even with jitter"
                )));
            }
        }
    }

    /// Fit with prior mean and signal variance taken from the data and
    /// length-scales and noise picked by maximum marginal likelihood over
    /// [`LENGTH_SCALE_GRID`] and [`NOISE_FRACTION_GRID`]. Ties keep the
    /// first setting in grid order.
    pub fn fit_by_marginal_likelihood(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Gp("need at least one observation".into()));
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let var = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        let signal_var = if var > 1e-300 { var } else { 1.0 };
        let dim = xs[0].len();

        let mut settings: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..dim {
            settings = settings
                .into_iter()
                .flat_map(|p| {
                    LENGTH_SCALE_GRID.iter().map(move |&l| {
                        let mut q = p.clone();
                        q.push(l);
                        q
                    })
                })
                .collect();
        }
        let mut best: Option<(f64, GpModel)> = None;
        let mut last_err = None;
        for ls in &settings {
            for frac in NOISE_FRACTION_GRID {
                let kernel = Kernel {
                    length_scales: ls.clone(),
                    signal_var,
                    noise_var: frac * signal_var,
                };
                match GpModel::fit(xs.clone(), ys.clone(), kernel, mean) {
                    Ok(m) => {
                        let lml = m.log_marginal_likelihood();
                        if best.as_ref().is_none_or(|(b, _)| lml > *b) {
                            best = Some((lml, m));
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
        }
        match best {
            Some((_, m)) => Ok(m),
            None => {
                Err(last_err
                    .unwrap_or_else(|| Error::Gp("no kernel setting could be fitted".into())))
            }
        }
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn n_obs(&self) -> usize {
        self.xs.len()
    }

    pub fn observations(&self) -> (&[Vec<f64>], &[f64]) {
        (&self.xs, &self.ys)
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.xs.len();
        let fit: f64 = self
            .ys
            .iter()
            .zip(self.alpha.iter())
            .map(|(y, a)| (y - self.prior_mean) * a)
            .sum();
        let logdet: f64 = self.chol.diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * fit - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and variance of the latent function at `x`.
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let kstar = DVector::from_iterator(
            self.xs.len(),
            self.xs.iter().map(|xi| self.kernel.eval(xi, x)),
        );
        let mean = self.prior_mean + kstar.dot(&self.alpha);
        let v = self
            .chol
            .solve_lower_triangular(&kstar)
            .expect("nonzero pivots");
        let var = self.kernel.signal_var - v.norm_squared();
        (mean, var.max(0.0))
    }
}

pub fn gp_posterior(m: &GpModel, x: &[f64]) -> (f64, f64) {
    m.posterior(x)
}

/// Expected improvement below `incumbent` for a Gaussian with the given
/// mean and standard deviation.
pub fn expected_improvement_from(mean: f64, sd: f64, incumbent: f64) -> f64 {
    let gap = incumbent - mean;
    if !(sd > 0.0) {
        return gap.max(0.0);
    }
    let unit = Normal::standard();
    let z = gap / sd;
    (gap * unit.cdf(z) + sd * unit.pdf(z)).max(0.0)
}

pub fn expected_improvement(m: &GpModel, x: &[f64], incumbent: f64) -> f64 {
    let (mean, var) = m.posterior(x);
    expected_improvement_from(mean, var.sqrt(), incumbent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn kernel(l: f64, noise: f64) -> Kernel {
        Kernel {
            length_scales: vec![l],
            signal_var: 2.0,
            noise_var: noise,
        }
    }

    #[test]
    fn interpolates_observed_points() {
        let xs = vec![vec![0.1], vec![0.4], vec![0.8]];
        let ys = vec![1.0, -0.5, 0.25];
        let m = GpModel::fit(xs, ys, kernel(0.3, 1e-12), 0.0).unwrap();
        let (mean, var) = gp_posterior(&m, &[0.4]);
        assert!((mean + 0.5).abs() < 1e-6, "{mean}");
        assert!(var < 1e-6, "{var}");
    }

    #[test]
    fn reverts_to_prior_far_away() {
        let m = GpModel::fit(
            vec![vec![0.0], vec![0.1]],
            vec![3.0, 4.0],
            kernel(0.1, 1e-6),
            1.5,
        )
        .unwrap();
        let (mean, var) = gp_posterior(&m, &[1.0]);
        assert!((mean - 1.5).abs() < 0.015 * 1.5);
        assert!((var - 2.0).abs() < 0.02 * 2.0);
    }

    #[test]
    fn predicts_smooth_function_midpoint() {
        let f = |x: f64| (3.0 * x).sin() + 0.5 * x;
        let xs: Vec<Vec<f64>> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&x| vec![x])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| f(x[0])).collect();
        let m = GpModel::fit_by_marginal_likelihood(xs, ys).unwrap();
        for q in [0.125, 0.375, 0.625] {
            let (mean, var) = m.posterior(&[q]);
            assert!(
                (mean - f(q)).abs() <= 3.0 * var.sqrt(),
                "q {q}: {mean} vs {}",
                f(q)
            );
        }
    }

    #[test]
    fn duplicate_points_need_jitter() {
        let xs = vec![vec![0.5], vec![0.5]];
        let m = GpModel::fit(xs, vec![1.0, 1.0], kernel(0.2, 0.0), 0.0).unwrap();
        assert!(m.jitter() > 0.0);
        let bad = Kernel {
            length_scales: vec![0.2],
            signal_var: f64::NAN,
            noise_var: 0.0,
        };
        assert!(matches!(
            GpModel::fit(vec![vec![0.0]], vec![0.0], bad, 0.0),
            Err(Error::Gp(_))
        ));
        assert!(GpModel::fit(vec![], vec![], kernel(0.2, 0.0), 0.0).is_err());
    }

    #[test]
    fn expected_improvement_examples() {
        assert_eq!(expected_improvement_from(1.0, 0.0, 1.0), 0.0);
        assert_eq!(expected_improvement_from(2.0, 0.0, 1.0), 0.0);
        let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
        assert!((expected_improvement_from(0.0, 1.0, 0.0) - phi0).abs() < 1e-6);
        assert!((expected_improvement_from(0.0, 1e-9, 1.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn variance_is_non_negative_at_many_queries() {
        let mut rng = Rng::new(5, 0);
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|_| vec![rng.uniform(), rng.uniform()])
            .collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0] * x[1]).collect();
        let m = GpModel::fit_by_marginal_likelihood(xs, ys).unwrap();
        for _ in 0..10_000 {
            let q = [rng.uniform() * 1.4 - 0.2, rng.uniform() * 1.4 - 0.2];
            assert!(m.posterior(&q).1 >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn extra_observation_never_raises_variance(
            pts in proptest::collection::vec(0.0f64..1.0, 2..8),
            extra in 0.0f64..1.0,
            q in 0.0f64..1.0,
            l in 0.05f64..1.0,
        ) {
            let k = Kernel { length_scales: vec![l], signal_var: 1.0, noise_var: 1e-6 };
            let xs: Vec<Vec<f64>> = pts.iter().map(|&x| vec![x]).collect();
            let ys: Vec<f64> = pts.iter().map(|x| x.sin()).collect();
            let before = GpModel::fit(xs.clone(), ys.clone(), k.clone(), 0.0).unwrap();
            let mut xs2 = xs;
            xs2.push(vec![extra]);
            let mut ys2 = ys;
            ys2.push(0.0);
            let after = GpModel::fit(xs2, ys2, k, 0.0).unwrap();
            prop_assume!(before.jitter() == after.jitter());
            prop_assert!(after.posterior(&[q]).1 <= before.posterior(&[q]).1 + 1e-12);
        }
    }
}
