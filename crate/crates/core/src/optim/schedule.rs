use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Learning-rate schedule shape, normalised to peak at 1.0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// Linear warmup to 1.0 at `warmup_steps`, then `sqrt(warmup / t)`.
    WarmupRsqrt {
        warmup_steps: u64,
    },
    /// 1.0 for `hold_steps`, then `sqrt(hold / t)`.
    ConstThenRsqrt {
        hold_steps: u64,
    },
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::WarmupRsqrt { warmup_steps: 0 } => {
                Err(Error::Config("warmup_rsqrt needs warmup_steps >= 1".into()))
            }
            Schedule::ConstThenRsqrt { hold_steps: 0 } => Err(Error::Config(
                "const_then_rsqrt needs hold_steps >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::WarmupRsqrt { .. } => "warmup_rsqrt",
            Schedule::ConstThenRsqrt { .. } => "const_then_rsqrt",
        }
    }

    /// Multiplier at 1-based step `t`.
    pub fn value(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::Contract("schedule steps start at 1".into()));
        }
        let t = t as f64;
        Ok(match *self {
            Schedule::Constant => 1.0,
            Schedule::WarmupRsqrt { warmup_steps } => {
                let w = warmup_steps as f64;
                (t / w).min((w / t).sqrt())
            }
            Schedule::ConstThenRsqrt { hold_steps } => {
                let h = hold_steps as f64;
                if t <= h {
                    1.0
                } else {
                    (h / t).sqrt()
                }
            }
        })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind_name())
    }
}

/// Parses the bare kind name; step counts are filled with 1 and set later.
impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "warmup_rsqrt" => Ok(Schedule::WarmupRsqrt { warmup_steps: 1 }),
            "const_then_rsqrt" => Ok(Schedule::ConstThenRsqrt { hold_steps: 1 }),
            other => Err(Error::Config(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Free-function form of [`Schedule::value`].
pub fn schedule_value(s: &Schedule, t: u64) -> Result<f64> {
    s.value(t)
}
