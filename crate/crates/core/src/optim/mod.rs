//! Optimizer kernels that also return one-step tangents.
//!
//! Every kernel maps `(params, grad, state, hyperparameters)` to the next
//! params and state. When asked, it also returns the derivative of the new
//! params with respect to the learning-rate scalar and to `beta1`, holding the
//! incoming state fixed: the horizon is exactly one step.

mod adafactor;
mod adam;
mod lamb;
mod schedule;

use std::fmt;
use std::str::FromStr;

pub use adafactor::{adafactor_step, ADAFACTOR_CLIP_THRESHOLD, ADAFACTOR_EPS1};
pub use adam::adam_step;
pub use lamb::lamb_step;
pub use schedule::{schedule_value, Schedule};

use crate::error::{Error, Result};
use crate::numerics::{Layout, ParamVector, Shape};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    Adam,
    Lamb,
    Adafactor,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [
        OptimizerKind::Adam,
        OptimizerKind::Lamb,
        OptimizerKind::Adafactor,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Lamb => "lamb",
            OptimizerKind::Adafactor => "adafactor",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "lamb" => Ok(OptimizerKind::Lamb),
            "adafactor" => Ok(OptimizerKind::Adafactor),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Optimizer hyperparameters.
///
/// The effective learning rate is `base_lr * alpha_scalar * schedule(t)`, so
/// `alpha_scalar = 1` reproduces the plain schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub base_lr: f64,
    pub alpha_scalar: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Adafactor second-moment decay exponent.
    pub decay_rate: f64,
    pub weight_decay: f64,
}

impl HyperParams {
    /// Library defaults for each optimizer.
    pub fn defaults(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Adam => HyperParams {
                base_lr: 1e-3,
                alpha_scalar: 1.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                decay_rate: 0.8,
                weight_decay: 0.0,
            },
            OptimizerKind::Lamb => HyperParams {
                base_lr: 1e-3,
                alpha_scalar: 1.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-6,
                decay_rate: 0.8,
                weight_decay: 0.0,
            },
            OptimizerKind::Adafactor => HyperParams {
                base_lr: 1e-3,
                alpha_scalar: 1.0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-30,
                decay_rate: 0.8,
                weight_decay: 0.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if !(self.alpha_scalar > 0.0 && self.alpha_scalar.is_finite()) {
            return bad("alpha_scalar must be > 0");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) {
            return bad("beta1 must lie in (0, 1)");
        }
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("beta2 must lie in (0, 1)");
        }
        if !(self.eps > 0.0) {
            return bad("eps must be > 0");
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return bad("base_lr must be > 0");
        }
        if !(self.decay_rate > 0.0) {
            return bad("decay_rate must be > 0");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }

    pub fn lr_effective(&self, sched: f64) -> f64 {
        self.base_lr * self.alpha_scalar * sched
    }
}

/// Switches that change what the tangents differentiate through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOptions {
    pub tangents: bool,
    /// Differentiate Adam/LAMB bias correction `1 - beta1^t` w.r.t. beta1.
    pub bias_correction_grad: bool,
    /// Differentiate the LAMB trust ratio w.r.t. beta1.
    pub trust_ratio_grad: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            tangents: true,
            bias_correction_grad: true,
            trust_ratio_grad: true,
        }
    }
}

impl StepOptions {
    pub fn without_tangents() -> Self {
        StepOptions {
            tangents: false,
            ..StepOptions::default()
        }
    }
}

/// Row and column second-moment accumulators of one factored matrix layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Factored {
    pub row: Vec<f64>,
    pub col: Vec<f64>,
}

/// Optimizer accumulators. `t` counts completed steps.
#[derive(Debug, Clone, PartialEq)]
pub struct OptState {
    pub t: u64,
    pub m: ParamVector,
    /// Full second moment. Unused entries (factored layers) stay zero.
    pub v: ParamVector,
    /// One slot per layer; `Some` only for Adafactor matrix layers.
    pub factored: Vec<Option<Factored>>,
}

impl OptState {
    pub fn new(kind: OptimizerKind, layout: &Arc<Layout>) -> Self {
        let factored = layout
            .layers()
            .iter()
            .map(|l| match (kind, l.shape) {
                (OptimizerKind::Adafactor, Shape::Matrix { rows, cols })
                    if rows >= 2 && cols >= 2 =>
                {
                    Some(Factored {
                        row: vec![0.0; rows],
                        col: vec![0.0; cols],
                    })
                }
                _ => None,
            })
            .collect();
        OptState {
            t: 0,
            m: ParamVector::zeros(layout),
            v: ParamVector::zeros(layout),
            factored,
        }
    }
}

/// `d new_params / d alpha_scalar` and `d new_params / d beta1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tangents {
    pub alpha: ParamVector,
    pub beta1: ParamVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub new_params: ParamVector,
    pub new_state: OptState,
    /// Present when tangents were requested.
    pub tangents: Option<Tangents>,
    pub lr_effective: f64,
    /// Adafactor only: some layer's update sat on the clipping kink.
    pub clip_boundary: bool,
}

impl StepOutput {
    pub fn tangent_alpha(&self) -> Option<&ParamVector> {
        self.tangents.as_ref().map(|t| &t.alpha)
    }

    pub fn tangent_beta1(&self) -> Option<&ParamVector> {
        self.tangents.as_ref().map(|t| &t.beta1)
    }
}

/// Dispatch to the kernel for `kind`.
pub fn optimizer_step(
    kind: OptimizerKind,
    params: &ParamVector,
    grad: &ParamVector,
    state: &OptState,
    h: &HyperParams,
    sched: f64,
    opts: StepOptions,
) -> Result<StepOutput> {
    match kind {
        OptimizerKind::Adam => adam_step(params, grad, state, h, sched, opts),
        OptimizerKind::Lamb => lamb_step(params, grad, state, h, sched, opts),
        OptimizerKind::Adafactor => adafactor_step(params, grad, state, h, sched, opts),
    }
}

fn check_inputs(params: &ParamVector, grad: &ParamVector, state: &OptState) -> Result<()> {
    params.check_layout(grad)?;
    params.check_layout(&state.m)?;
    params.check_layout(&state.v)?;
    if state.factored.len() != params.layout().layers().len() {
        return Err(Error::LayoutMismatch(
            "optimizer state has wrong layer count".into(),
        ));
    }
    Ok(())
}

fn check_finite(v: &ParamVector, what: &str, t: u64) -> Result<()> {
    match v.first_non_finite() {
        Some(i) => Err(Error::numeric(
            format!("optimizer step {t}"),
            format!("non-finite {what} at coordinate {i}"),
        )),
        None => Ok(()),
    }
}

/// Bias-corrected first moment and its derivative w.r.t. beta1, holding the
/// incoming moment fixed.
///
/// The derivative is evaluated as a single fraction so that the first step
/// from a zero moment cancels to exactly zero.
#[inline]
fn corrected_first_moment(m: f64, g: f64, beta1: f64, t: u64, bias_grad: bool) -> (f64, f64, f64) {
    let m_new = beta1 * m + (1.0 - beta1) * g;
    let bc = 1.0 - beta1.powi(t as i32);
    let m_hat = m_new / bc;
    let dm = m - g;
    let dm_hat = if bias_grad {
        let dbc_term = m_new * (t as f64) * beta1.powi(t as i32 - 1);
        (dm * bc + dbc_term) / (bc * bc)
    } else {
        dm / bc
    };
    (m_new, m_hat, dm_hat)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::numerics::Rng;

    /// Central difference of `f(x)` scaled to a relative error.
    pub fn rel_err(a: f64, b: f64) -> f64 {
        let scale = a.abs().max(b.abs());
        if scale == 0.0 {
            0.0
        } else {
            (a - b).abs() / scale
        }
    }

    /// Max over coordinates of |a-b| / max(|a|,|b|, floor), floor relative to
    /// the largest entry so near-zero coordinates do not dominate.
    pub fn vec_rel_err(a: &ParamVector, b: &ParamVector) -> f64 {
        let scale = a
            .values()
            .iter()
            .chain(b.values())
            .fold(0.0f64, |s, v| s.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        a.values()
            .iter()
            .zip(b.values())
            .map(|(x, y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn fd_tangent(
        kind: OptimizerKind,
        params: &ParamVector,
        grad: &ParamVector,
        state: &OptState,
        h: &HyperParams,
        sched: f64,
        which: &str,
        step: f64,
    ) -> ParamVector {
        let eval = |delta: f64| {
            let mut hp = *h;
            match which {
                "alpha" => hp.alpha_scalar += delta,
                _ => hp.beta1 += delta,
            }
            optimizer_step(
                kind,
                params,
                grad,
                state,
                &hp,
                sched,
                StepOptions::without_tangents(),
            )
            .unwrap()
            .new_params
        };
        let plus = eval(step);
        let minus = eval(-step);
        let vals = plus
            .values()
            .iter()
            .zip(minus.values())
            .map(|(p, m)| (p - m) / (2.0 * step))
            .collect();
        ParamVector::from_values(params.layout(), vals).unwrap()
    }

    /// Random state reached by running `warm` steps of random gradients.
    pub fn random_instance(
        kind: OptimizerKind,
        layout: &Arc<Layout>,
        warm: u64,
        rng: &mut Rng,
    ) -> (ParamVector, ParamVector, OptState) {
        let n = layout.len();
        let params = ParamVector::from_values(layout, rng.draw_gaussian(n)).unwrap();
        let mut state = OptState::new(kind, layout);
        let h = HyperParams::defaults(kind);
        let mut p = params.clone();
        for _ in 0..warm {
            let g = ParamVector::from_values(layout, rng.draw_gaussian(n)).unwrap();
            let out = optimizer_step(
                kind,
                &p,
                &g,
                &state,
                &h,
                1.0,
                StepOptions::without_tangents(),
            )
            .unwrap();
            p = out.new_params;
            state = out.new_state;
        }
        let grad = ParamVector::from_values(layout, rng.draw_gaussian(n)).unwrap();
        (p, grad, state)
    }
}
