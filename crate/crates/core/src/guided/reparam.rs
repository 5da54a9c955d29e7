use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Raw values are kept inside this symmetric range before activation.
pub const RAW_CLAMP: f64 = 30.0;

/// A hyperparameter that can be guided.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HyperName {
    AlphaScalar,
    Beta1,
}

impl HyperName {
    pub const ALL: [HyperName; 2] = [HyperName::AlphaScalar, HyperName::Beta1];

    pub fn name(self) -> &'static str {
        match self {
            HyperName::AlphaScalar => "alpha_scalar",
            HyperName::Beta1 => "beta1",
        }
    }

    pub fn activation(self) -> Activation {
        match self {
            HyperName::AlphaScalar => Activation::Exp,
            HyperName::Beta1 => Activation::Sigmoid,
        }
    }
}

impl fmt::Display for HyperName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HyperName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha_scalar" | "alpha" => Ok(HyperName::AlphaScalar),
            "beta1" => Ok(HyperName::Beta1),
            other => Err(Error::Config(format!("unknown hyperparameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// `e^x`, domain (0, inf)
    Exp,
    /// `1 / (1 + e^-x)`, domain (0, 1)
    Sigmoid,
}

impl Activation {
    /// Activated value and its derivative w.r.t. the raw value.
    pub fn apply(self, raw: f64) -> (f64, f64) {
        let x = raw.clamp(-RAW_CLAMP, RAW_CLAMP);
        match self {
            Activation::Exp => {
                let e = x.exp();
                (e, e)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                (s, s * (1.0 - s))
            }
        }
    }

    pub fn inverse(self, value: f64) -> Result<f64> {
        let raw = match self {
            Activation::Exp if value > 0.0 => value.ln(),
            Activation::Sigmoid if value > 0.0 && value < 1.0 => (value / (1.0 - value)).ln(),
            _ => {
                return Err(Error::Config(format!(
                    "{value} is outside the domain of the {self:?} activation"
                )))
            }
        };
        if !raw.is_finite() || raw.abs() > RAW_CLAMP {
            return Err(Error::Config(format!(
                "initial value {value} maps outside the raw clamp"
            )));
        }
        Ok(raw)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A guided hyperparameter: unconstrained raw value, its activated value and
/// the scalar Adam state of the meta-optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    pub name: HyperName,
    raw: f64,
    /// Activated value. Set verbatim from the initial value and recomputed
    /// only when the raw value moves, so a zero meta step leaves the exact
    /// configured hyperparameter in place.
    value: f64,
    pub meta_m: f64,
    pub meta_v: f64,
    pub meta_t: u64,
}

impl Reparam {
    /// Start from an activated value, e.g. `alpha_scalar = 1`, `beta1 = 0.9`.
    pub fn from_value(name: HyperName, value: f64) -> Result<Self> {
        let raw = name.activation().inverse(value)?;
        Ok(Reparam {
            name,
            raw,
            value,
            meta_m: 0.0,
            meta_v: 0.0,
            meta_t: 0,
        })
    }

    pub fn from_raw(name: HyperName, raw: f64) -> Result<Self> {
        if !raw.is_finite() {
            return Err(Error::numeric(name.name(), "raw value is not finite"));
        }
        let raw = raw.clamp(-RAW_CLAMP, RAW_CLAMP);
        Ok(Reparam {
            name,
            raw,
            value: name.activation().apply(raw).0,
            meta_m: 0.0,
            meta_v: 0.0,
            meta_t: 0,
        })
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn activation(&self) -> Activation {
        self.name.activation()
    }

    /// `(value, d value / d raw)`
    pub fn activate(&self) -> (f64, f64) {
        let d = match self.activation() {
            Activation::Exp => self.value,
            Activation::Sigmoid => self.value * (1.0 - self.value),
        };
        (self.value, d)
    }

    fn set_raw(&mut self, raw: f64) -> Result<()> {
        if !raw.is_finite() {
            return Err(Error::numeric(
                self.name.name(),
                format!("raw value became {raw}"),
            ));
        }
        let raw = raw.clamp(-RAW_CLAMP, RAW_CLAMP);
        if raw != self.raw {
            self.raw = raw;
            self.value = self.activation().apply(raw).0;
        }
        Ok(())
    }
}

/// Free-function form of [`Reparam::activate`].
pub fn activate(r: &Reparam) -> (f64, f64) {
    r.activate()
}

/// Meta-optimizer settings. Only `meta_lr` is meant to be tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaConfig {
    pub meta_lr: f64,
    pub meta_beta1: f64,
    pub meta_beta2: f64,
    pub meta_eps: f64,
    pub guided: Vec<HyperName>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            meta_lr: 0.0,
            meta_beta1: 0.9,
            meta_beta2: 0.999,
            meta_eps: 1e-8,
            guided: Vec::new(),
        }
    }
}

impl MetaConfig {
    pub fn guiding(guided: &[HyperName], meta_lr: f64) -> Self {
        MetaConfig {
            meta_lr,
            guided: guided.to_vec(),
            ..MetaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.meta_lr >= 0.0 && self.meta_lr.is_finite()) {
            return Err(Error::Config(format!(
                "meta_lr must be >= 0, got {}",
                self.meta_lr
            )));
        }
        if !(self.meta_beta1 >= 0.0
            && self.meta_beta1 < 1.0
            && self.meta_beta2 > 0.0
            && self.meta_beta2 < 1.0)
        {
            return Err(Error::Config("meta betas must lie in [0, 1)".into()));
        }
        if !(self.meta_eps > 0.0) {
            return Err(Error::Config("meta_eps must be > 0".into()));
        }
        Ok(())
    }

    pub fn guides(&self, name: HyperName) -> bool {
        self.guided.contains(&name)
    }
}

/// One scalar Adam step on the raw value.
pub fn meta_adam_update(r: &Reparam, g_raw: f64, mc: &MetaConfig) -> Result<Reparam> {
    if !g_raw.is_finite() {
        return Err(Error::numeric(
            format!("meta update of {}", r.name),
            format!("hypergradient is {g_raw}"),
        ));
    }
    let mut next = r.clone();
    next.meta_t += 1;
    next.meta_m = mc.meta_beta1 * r.meta_m + (1.0 - mc.meta_beta1) * g_raw;
    next.meta_v = mc.meta_beta2 * r.meta_v + (1.0 - mc.meta_beta2) * g_raw * g_raw;
    let m_hat = next.meta_m / (1.0 - mc.meta_beta1.powi(next.meta_t.min(i32::MAX as u64) as i32));
    let v_hat = next.meta_v / (1.0 - mc.meta_beta2.powi(next.meta_t.min(i32::MAX as u64) as i32));
    let step = mc.meta_lr * m_hat / (v_hat.sqrt() + mc.meta_eps);
    next.set_raw(r.raw - step)?;
    Ok(next)
}
