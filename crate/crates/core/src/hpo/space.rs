use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// How a dimension is mapped onto the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Linear,
    Log,
    Logit,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::Linear => "linear",
            Scale::Log => "log",
            Scale::Logit => "logit",
        }
    }

    fn forward(self, x: f64) -> f64 {
        match self {
            Scale::Linear => x,
            Scale::Log => x.ln(),
            Scale::Logit => (x / (1.0 - x)).ln(),
        }
    }

    fn backward(self, y: f64) -> f64 {
        match self {
            Scale::Linear => y,
            Scale::Log => y.exp(),
            Scale::Logit => 1.0 / (1.0 + (-y).exp()),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Scale::Linear),
            "log" => Ok(Scale::Log),
            "logit" => Ok(Scale::Logit),
            other => Err(Error::Config(format!("unknown scale `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dim {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub scale: Scale,
}

impl Dim {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64, scale: Scale) -> Result<Self> {
        let name = name.into();
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Config(format!(
                "dimension `{name}`: need lower < upper, got [{lower}, {upper}]"
            )));
        }
        match scale {
            Scale::Log if lower <= 0.0 => {
                return Err(Error::Config(format!(
                    "dimension `{name}`: log scale needs lower > 0"
                )));
            }
            Scale::Logit if !(lower > 0.0 && upper < 1.0) => {
                return Err(Error::Config(format!(
                    "dimension `{name}`: logit scale needs 0 < lower < upper < 1"
                )));
            }
            _ => {}
        }
        Ok(Dim {
            name,
            lower,
            upper,
            scale,
        })
    }

    /// Map a value in `[lower, upper]` to `[0, 1]`.
    pub fn to_unit(&self, x: f64) -> f64 {
        let (lo, hi) = (
            self.scale.forward(self.lower),
            self.scale.forward(self.upper),
        );
        (self.scale.forward(x) - lo) / (hi - lo)
    }

    /// Map a unit coordinate back into `[lower, upper]`.
    pub fn from_unit(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.lower;
        }
        if u >= 1.0 {
            return self.upper;
        }
        let (lo, hi) = (
            self.scale.forward(self.lower),
            self.scale.forward(self.upper),
        );
        self.scale
            .backward(lo + u * (hi - lo))
            .clamp(self.lower, self.upper)
    }
}

/// Box of hyperparameter ranges, each with its own scale.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    dims: Vec<Dim>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("search space has no dimensions".into()));
        }
        Ok(SearchSpace { dims })
    }

    pub fn single(name: &str, lower: f64, upper: f64, scale: Scale) -> Result<Self> {
        SearchSpace::new(vec![Dim::new(name, lower, upper, scale)?])
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(x)
            .map(|(d, &v)| d.to_unit(v))
            .collect()
    }

    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(u)
            .map(|(d, &v)| d.from_unit(v))
            .collect()
    }

    /// Unit coordinates of an evenly spaced grid, in lexicographic order
    /// (first dimension slowest).
    pub fn unit_grid(&self, points_per_dim: usize) -> Vec<Vec<f64>> {
        let axis: Vec<f64> = (0..points_per_dim)
            .map(|i| {
                if points_per_dim == 1 {
                    0.5
                } else {
                    i as f64 / (points_per_dim - 1) as f64
                }
            })
            .collect();
        let mut out: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in &self.dims {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&a| {
                        let mut p = prefix.clone();
                        p.push(a);
                        p
                    })
                })
                .collect();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_dims_are_rejected() {
        assert!(Dim::new("x", 1.0, 1.0, Scale::Linear).is_err());
        assert!(Dim::new("x", 0.0, 1.0, Scale::Log).is_err());
        assert!(Dim::new("x", 0.0, 0.5, Scale::Logit).is_err());
        assert!(Dim::new("x", 0.1, 1.0, Scale::Logit).is_err());
        assert!(Dim::new("x", 0.01, 0.99, Scale::Logit).is_ok());
        assert!(SearchSpace::new(vec![]).is_err());
    }

    #[test]
    fn unit_mapping_round_trips() {
        for (lo, hi, s) in [
            (-2.0, 3.0, Scale::Linear),
            (1e-4, 10.0, Scale::Log),
            (0.01, 0.999, Scale::Logit),
        ] {
            let d = Dim::new("x", lo, hi, s).unwrap();
            assert!((d.from_unit(0.0) - lo).abs() < 1e-15);
            assert!((d.from_unit(1.0) - hi).abs() < 1e-15);
            for u in [0.1, 0.37, 0.5, 0.9] {
                assert!((d.to_unit(d.from_unit(u)) - u).abs() < 1e-12);
            }
        }
        // The log midpoint is the geometric mean.
        let d = Dim::new("lr", 1e-4, 1e-2, Scale::Log).unwrap();
        assert!((d.from_unit(0.5) - 1e-3).abs() < 1e-15);
        // The logit midpoint of a symmetric range is one half.
        let d = Dim::new("b", 0.1, 0.9, Scale::Logit).unwrap();
        assert!((d.from_unit(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_is_lexicographic() {
        let space = SearchSpace::new(vec![
            Dim::new("a", 0.0, 1.0, Scale::Linear).unwrap(),
            Dim::new("b", 0.0, 1.0, Scale::Linear).unwrap(),
        ])
        .unwrap();
        let g = space.unit_grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![0.0, 0.0]);
        assert_eq!(g[1], vec![0.0, 0.5]);
        assert_eq!(g[3], vec![0.5, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }
}
