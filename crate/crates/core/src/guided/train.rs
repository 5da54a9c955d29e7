use super::reparam::{meta_adam_update, HyperName, MetaConfig, Reparam};
use super::runlog::{RunLog, StepRecord};
use crate::error::{Error, Result};
use crate::models::{Batch, BatchOrder, Task};
use crate::numerics::{ParamVector, Rng};
use crate::optim::{
    optimizer_step, HyperParams, OptState, OptimizerKind, Schedule, StepOptions, StepOutput,
};

/// Where the guidance batch comes from each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMode {
    /// The same held-out batch every step.
    #[default]
    Fixed,
    /// Cycle through the task's held-out guidance batches.
    Resampled,
}

/// Everything a training run needs besides the task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    /// Initial hyperparameters; `alpha_scalar` and `beta1` double as the
    /// initial values of guided hyperparameters.
    pub hypers: HyperParams,
    pub schedule: Schedule,
    pub meta: MetaConfig,
    pub steps: u64,
    /// Evaluate the dev batch every this many steps; 0 disables it.
    pub eval_every: u64,
    pub bias_correction_grad: bool,
    pub trust_ratio_grad: bool,
    pub guidance: GuidanceMode,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, steps: u64) -> Self {
        TrainConfig {
            optimizer,
            hypers: HyperParams::defaults(optimizer),
            schedule: Schedule::Constant,
            meta: MetaConfig::default(),
            steps,
            eval_every: 0,
            bias_correction_grad: true,
            trust_ratio_grad: true,
            guidance: GuidanceMode::Fixed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be at least 1".into()));
        }
        if self.eval_every > 0 && !self.steps.is_multiple_of(self.eval_every) {
            return Err(Error::Config(format!(
                "eval_every = {} does not divide steps = {}",
                self.eval_every, self.steps
            )));
        }
        self.hypers.validate()?;
        self.schedule.validate()?;
        self.meta.validate()
    }

    fn step_options(&self) -> StepOptions {
        StepOptions {
            tangents: !self.meta.guided.is_empty(),
            bias_correction_grad: self.bias_correction_grad,
            trust_ratio_grad: self.trust_ratio_grad,
        }
    }
}

/// Raw-space hypergradients of the guided hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperGrads {
    pub alpha: Option<f64>,
    pub beta1: Option<f64>,
}

impl HyperGrads {
    pub fn get(&self, name: HyperName) -> Result<f64> {
        let v = match name {
            HyperName::AlphaScalar => self.alpha,
            HyperName::Beta1 => self.beta1,
        };
        v.ok_or_else(|| Error::Contract(format!("{name} is not guided")))
    }
}

/// The guided hyperparameters of a run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GuidedHypers {
    pub alpha: Option<Reparam>,
    pub beta1: Option<Reparam>,
}

impl GuidedHypers {
    pub fn new(meta: &MetaConfig, h0: &HyperParams) -> Result<Self> {
        let alpha = meta
            .guides(HyperName::AlphaScalar)
            .then(|| Reparam::from_value(HyperName::AlphaScalar, h0.alpha_scalar))
            .transpose()?;
        let beta1 = meta
            .guides(HyperName::Beta1)
            .then(|| Reparam::from_value(HyperName::Beta1, h0.beta1))
            .transpose()?;
        Ok(GuidedHypers { alpha, beta1 })
    }

    pub fn get(&self, name: HyperName) -> Result<&Reparam> {
        let r = match name {
            HyperName::AlphaScalar => self.alpha.as_ref(),
            HyperName::Beta1 => self.beta1.as_ref(),
        };
        r.ok_or_else(|| Error::Contract(format!("{name} is not guided")))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Reparam> {
        self.alpha.iter().chain(self.beta1.iter())
    }

    /// Copy of `base` carrying the current activated values.
    pub fn apply(&self, base: &HyperParams) -> HyperParams {
        let mut h = *base;
        if let Some(a) = &self.alpha {
            h.alpha_scalar = a.value();
        }
        if let Some(b) = &self.beta1 {
            h.beta1 = b.value();
        }
        h
    }
}

/// Raw-space hypergradient of every guided hyperparameter:
/// `dot(guidance_grad, d theta' / d value) * d value / d raw`.
pub fn hypergradient(
    guidance_grad: &ParamVector,
    step_out: &StepOutput,
    reparams: &GuidedHypers,
) -> Result<HyperGrads> {
    let mut out = HyperGrads::default();
    if reparams.iter().next().is_none() {
        return Ok(out);
    }
    let tangents = step_out
        .tangents
        .as_ref()
        .ok_or_else(|| Error::Contract("hypergradient needs a step run with tangents".into()))?;
    if let Some(a) = &reparams.alpha {
        out.alpha = Some(guidance_grad.dot(&tangents.alpha)? * a.activate().1);
    }
    if let Some(b) = &reparams.beta1 {
        out.beta1 = Some(guidance_grad.dot(&tangents.beta1)? * b.activate().1);
    }
    Ok(out)
}

/// Everything needed to replay a single guided step in isolation.
#[derive(Debug, Clone)]
pub struct StepSnapshot {
    /// 1-based index of the step this snapshot replays.
    pub step: u64,
    pub optimizer: OptimizerKind,
    pub params: ParamVector,
    pub state: OptState,
    pub train_batch: Batch,
    pub guidance_batch: Batch,
    pub base_hypers: HyperParams,
    pub guided: GuidedHypers,
    pub sched: f64,
    pub options: StepOptions,
}

impl StepSnapshot {
    /// Hyperparameters with `name` replaced by `activation(raw)`.
    pub fn hypers_at_raw(&self, name: HyperName, raw: f64) -> HyperParams {
        let mut h = self.guided.apply(&self.base_hypers);
        let value = name.activation().apply(raw).0;
        match name {
            HyperName::AlphaScalar => h.alpha_scalar = value,
            HyperName::Beta1 => h.beta1 = value,
        }
        h
    }

    /// Run the step with the given hyperparameters and return the guidance
    /// loss at the new parameters plus the raw step output.
    pub fn replay(
        &self,
        task: &Task,
        h: &HyperParams,
        tangents: bool,
    ) -> Result<(f64, StepOutput)> {
        let (_, grad) = task.loss_and_grad(&self.params, &self.train_batch)?;
        let opts = StepOptions {
            tangents,
            ..self.options
        };
        let out = optimizer_step(
            self.optimizer,
            &self.params,
            &grad,
            &self.state,
            h,
            self.sched,
            opts,
        )?;
        let loss = task.loss(&out.new_params, &self.guidance_batch)?;
        Ok((loss, out))
    }

    /// Analytic hypergradients at this snapshot.
    pub fn hypergradient(&self, task: &Task) -> Result<HyperGrads> {
        let h = self.guided.apply(&self.base_hypers);
        let (_, out) = self.replay(task, &h, true)?;
        let (_, guidance_grad) = task.loss_and_grad(&out.new_params, &self.guidance_batch)?;
        hypergradient(&guidance_grad, &out, &self.guided)
    }
}

/// Step-by-step driver of a guided (or plain) training run.
///
/// Per step: training gradient at the current parameters, optimizer step with
/// tangents, guidance gradient at the new parameters, hypergradients, then the
/// meta update that takes effect from the next step.
pub struct Trainer<'a> {
    task: &'a Task,
    cfg: TrainConfig,
    options: StepOptions,
    params: ParamVector,
    state: OptState,
    guided: GuidedHypers,
    order: BatchOrder,
    guidance_order: Option<BatchOrder>,
    t: u64,
    log: RunLog,
}

const STREAM_TRAIN_ORDER: u64 = 101;
const STREAM_GUIDANCE_ORDER: u64 = 102;

impl<'a> Trainer<'a> {
    /// `rng` seeds the training-batch order (and the guidance order in
    /// resampled mode).
    pub fn new(task: &'a Task, cfg: &TrainConfig, rng: &Rng) -> Result<Self> {
        cfg.validate()?;
        if task.train_batches().is_empty() {
            return Err(Error::Config("task has no training batches".into()));
        }
        let guided = GuidedHypers::new(&cfg.meta, &cfg.hypers)?;
        let guidance_order = match cfg.guidance {
            GuidanceMode::Fixed => None,
            GuidanceMode::Resampled => Some(BatchOrder::new(
                task.guidance_batches().len(),
                rng.fork(STREAM_GUIDANCE_ORDER),
            )),
        };
        Ok(Trainer {
            task,
            options: cfg.step_options(),
            cfg: cfg.clone(),
            params: task.init_params().clone(),
            state: OptState::new(cfg.optimizer, task.layout()),
            guided,
            order: BatchOrder::new(task.train_batches().len(), rng.fork(STREAM_TRAIN_ORDER)),
            guidance_order,
            t: 0,
            log: RunLog::default(),
        })
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn guided(&self) -> &GuidedHypers {
        &self.guided
    }

    pub fn steps_done(&self) -> u64 {
        self.t
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.cfg.steps
    }

    fn next_batches(&mut self) -> (&'a Batch, &'a Batch) {
        let task = self.task;
        let train = &task.train_batches()[self.order.next_index()];
        let guidance = match self.guidance_order.as_mut() {
            Some(order) => &task.guidance_batches()[order.next_index()],
            None => {
                let g = task.guidance_batch();
                debug_assert!(std::ptr::eq(g, &task.guidance_batches()[0]));
                g
            }
        };
        (train, guidance)
    }

    /// Draw the next step's batches and return a replayable snapshot of it
    /// without advancing the run. The batch order is restored afterwards.
    pub fn snapshot(&self) -> Result<StepSnapshot> {
        let t = self.t + 1;
        let mut probe = Trainer {
            task: self.task,
            cfg: self.cfg.clone(),
            options: self.options,
            params: self.params.clone(),
            state: self.state.clone(),
            guided: self.guided.clone(),
            order: self.order.clone(),
            guidance_order: self.guidance_order.clone(),
            t: self.t,
            log: RunLog::default(),
        };
        let (train, guidance) = probe.next_batches();
        Ok(StepSnapshot {
            step: t,
            optimizer: self.cfg.optimizer,
            params: self.params.clone(),
            state: self.state.clone(),
            train_batch: train.clone(),
            guidance_batch: guidance.clone(),
            base_hypers: self.cfg.hypers,
            guided: self.guided.clone(),
            sched: self.cfg.schedule.value(t)?,
            options: StepOptions {
                tangents: true,
                ..self.options
            },
        })
    }

    /// Advance one step.
    pub fn step(&mut self) -> Result<&StepRecord> {
        let t = self.t + 1;
        self.step_inner(t)
            .map_err(|e| e.with_context(format!("training step {t}")))?;
        Ok(self.log.records.last().expect("step just recorded"))
    }

    fn step_inner(&mut self, t: u64) -> Result<()> {
        let task = self.task;
        let (train, guidance) = self.next_batches();
        let sched = self.cfg.schedule.value(t)?;
        let h = self.guided.apply(&self.cfg.hypers);

        let (train_loss, grad) = task.loss_and_grad(&self.params, train)?;
        let out = optimizer_step(
            self.cfg.optimizer,
            &self.params,
            &grad,
            &self.state,
            &h,
            sched,
            self.options,
        )?;

        let (guidance_loss, grads) = if self.options.tangents {
            let (loss, guidance_grad) = task.loss_and_grad(&out.new_params, guidance)?;
            (loss, hypergradient(&guidance_grad, &out, &self.guided)?)
        } else {
            (task.loss(&out.new_params, guidance)?, HyperGrads::default())
        };

        let dev_loss = if self.cfg.eval_every > 0 && t.is_multiple_of(self.cfg.eval_every) {
            Some(task.loss(&out.new_params, task.dev_batch())?)
        } else {
            None
        };

        self.log.records.push(StepRecord {
            step: t,
            train_loss,
            guidance_loss,
            dev_loss,
            alpha_scalar: h.alpha_scalar,
            beta1: h.beta1,
            raw_alpha: self.guided.alpha.as_ref().map(Reparam::raw),
            raw_beta1: self.guided.beta1.as_ref().map(Reparam::raw),
            hypergrad_alpha: grads.alpha,
            hypergrad_beta1: grads.beta1,
            lr_effective: out.lr_effective,
        });

        if let (Some(r), Some(g)) = (self.guided.alpha.as_mut(), grads.alpha) {
            *r = meta_adam_update(r, g, &self.cfg.meta)?;
        }
        if let (Some(r), Some(g)) = (self.guided.beta1.as_mut(), grads.beta1) {
            *r = meta_adam_update(r, g, &self.cfg.meta)?;
        }
        self.params = out.new_params;
        self.state = out.new_state;
        self.t = t;
        Ok(())
    }

    /// Run the remaining steps and return the log.
    pub fn run(mut self) -> Result<RunLog> {
        while !self.is_done() {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(mut self) -> RunLog {
        self.log.final_params = Some(self.params);
        self.log
    }
}

/// Train `task` for `cfg.steps` steps, guiding the hyperparameters listed in
/// `cfg.meta.guided`. With nothing guided this is plain training.
pub fn guided_train(task: &Task, cfg: &TrainConfig, rng: &Rng) -> Result<RunLog> {
    Trainer::new(task, cfg, rng)?.run()
}
