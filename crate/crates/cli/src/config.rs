//! Experiment configuration: a flat, sectioned `key = value` file.
//!
//! ```text
//! [task]
//! kind = "quadratic"
//!
//! [optimizer]
//! kind = "adam"
//! base_lr = 0.01
//!
//! [guided]
//! params = ["beta1"]
//! meta_lr = 3e-3
//! ```
//!
//! The syntax is TOML restricted to one level of sections. Only `[task]`
//! and `[optimizer]` with their `kind` keys are required.

use std::fmt::Write as _;
use std::path::PathBuf;

use guided_core::guided::{GuidanceMode, HyperName, MetaConfig, TrainConfig};
use guided_core::models::{TaskKind, TaskSpec};
use guided_core::optim::{HyperParams, OptimizerKind, Schedule};
use toml::{Table, Value};

use crate::error::ConfigError;

const SECTIONS: [(&str, &[&str]); 5] = [
    (
        "task",
        &[
            "kind",
            "dim",
            "n_train",
            "batch_size",
            "noise_std",
            "seed",
            "condition_number",
            "hidden",
            "guidance_batches",
        ],
    ),
    (
        "optimizer",
        &[
            "kind",
            "base_lr",
            "beta1",
            "beta2",
            "eps",
            "decay_rate",
            "weight_decay",
            "schedule",
            "warmup_steps",
            "hold_steps",
        ],
    ),
    (
        "guided",
        &[
            "params",
            "meta_lr",
            "init_alpha",
            "init_beta1",
            "trust_ratio_grad",
            "bias_correction_grad",
            "guidance",
        ],
    ),
    ("train", &["steps", "eval_every", "target_dev_loss"]),
    ("output", &["dir"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSection {
    pub kind: TaskKind,
    pub dim: usize,
    pub n_train: usize,
    pub batch_size: usize,
    pub noise_std: f64,
    pub seed: u64,
    pub condition_number: f64,
    pub hidden: usize,
    pub guidance_batches: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSection {
    pub kind: OptimizerKind,
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_rate: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSection {
    pub params: Vec<HyperName>,
    pub meta_lr: f64,
    pub init_alpha: f64,
    pub init_beta1: f64,
    pub trust_ratio_grad: bool,
    pub bias_correction_grad: bool,
    pub guidance: GuidanceMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSection {
    pub steps: u64,
    pub eval_every: u64,
    /// Dev loss used for the steps-to-target summary field.
    pub target_dev_loss: Option<f64>,
}

/// A fully validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: TaskSection,
    pub optimizer: OptimizerSection,
    pub guided: GuidedSection,
    pub train: TrainSection,
    pub output_dir: PathBuf,
}

/// Parsed but not yet validated config; overrides can still be applied.
#[derive(Debug, Clone)]
pub struct RawConfig {
    text: String,
    table: Table,
    overridden: Vec<(String, String)>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of `key` inside `[section]`, found by a plain scan of the text.
fn line_of_key(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim().trim_matches('"') == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

fn value_kind(v: &Value) -> &'static str {
    v.type_str()
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| ConfigError {
            line: e.span().map(|s| line_of_offset(text, s.start)),
            key: "syntax".into(),
            message: e.message().trim().to_string(),
        })?;
        let raw = RawConfig {
            text: text.to_string(),
            table,
            overridden: Vec::new(),
        };
        raw.check_keys()?;
        Ok(raw)
    }

    fn err(&self, section: &str, key: &str, message: impl Into<String>) -> ConfigError {
        let path = format!("{section}.{key}");
        let line = if self.overridden.iter().any(|(p, _)| *p == path) {
            None
        } else {
            line_of_key(&self.text, section, key)
        };
        ConfigError {
            line,
            key: path,
            message: message.into(),
        }
    }

    fn check_keys(&self) -> Result<(), ConfigError> {
        for (name, value) in &self.table {
            let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
                return Err(ConfigError {
                    line: line_of_key(&self.text, name, "")
                        .or_else(|| line_of_key(&self.text, "", name)),
                    key: name.clone(),
                    message: "unknown section".into(),
                });
            };
            let Value::Table(entries) = value else {
                return Err(ConfigError {
                    line: line_of_key(&self.text, "", name),
                    key: name.clone(),
                    message: "expected a [section]".into(),
                });
            };
            for key in entries.keys() {
                if !keys.contains(&key.as_str()) {
                    return Err(self.err(name, key, "unknown key"));
                }
            }
        }
        Ok(())
    }

    /// Set `section.key` to `value`, which is read as a TOML value when it
    /// parses as one and as a bare string otherwise.
    pub fn set(&mut self, path: &str, value: &str) -> Result<(), ConfigError> {
        let bad_path = || ConfigError {
            line: None,
            key: path.to_string(),
            message: "not a config field (expected section.key)".into(),
        };
        let (section, key) = path.split_once('.').ok_or_else(bad_path)?;
        let known = SECTIONS
            .iter()
            .find(|(s, _)| *s == section)
            .is_some_and(|(_, keys)| keys.contains(&key));
        if !known {
            return Err(bad_path());
        }
        let parsed: Value = value
            .parse()
            .unwrap_or_else(|_| Value::String(value.to_string()));
        let entry = self
            .table
            .entry(section.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        if let Value::Table(t) = entry {
            t.insert(key.to_string(), parsed);
        }
        self.overridden.push((path.to_string(), value.to_string()));
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&Value> {
        self.table.get(section)?.as_table()?.get(key)
    }

    fn has_section(&self, section: &str) -> bool {
        self.table.contains_key(section)
    }

    fn f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Float(f)) => Ok(*f),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(v) => Err(self.err(
                section,
                key,
                format!("expected a number, found {}", value_kind(v)),
            )),
        }
    }

    fn opt_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(_) => self.f64_or(section, key, 0.0).map(Some),
        }
    }

    fn u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(Value::Integer(i)) => {
                Err(self.err(section, key, format!("must be >= 0, got {i}")))
            }
            Some(v) => Err(self.err(
                section,
                key,
                format!("expected an integer, found {}", value_kind(v)),
            )),
        }
    }

    fn usize_or(&self, section: &str, key: &str, default: usize) -> Result<usize, ConfigError> {
        self.u64_or(section, key, default as u64)
            .map(|v| v as usize)
    }

    fn bool_or(&self, section: &str, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.get(section, key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(v) => Err(self.err(
                section,
                key,
                format!("expected true or false, found {}", value_kind(v)),
            )),
        }
    }

    fn str_opt(&self, section: &str, key: &str) -> Result<Option<String>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(v) => Err(self.err(
                section,
                key,
                format!("expected a string, found {}", value_kind(v)),
            )),
        }
    }

    fn parse_enum<T>(
        &self,
        section: &str,
        key: &str,
        required: bool,
    ) -> Result<Option<T>, ConfigError>
    where
        T: std::str::FromStr<Err = guided_core::Error>,
    {
        match self.str_opt(section, key)? {
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|e: guided_core::Error| self.err(section, key, e.to_string())),
            None if required => Err(self.err(section, key, "missing required key")),
            None => Ok(None),
        }
    }

    /// `params` as an array of names, or one string joined with `+`.
    fn hyper_names(&self) -> Result<Vec<HyperName>, ConfigError> {
        let names: Vec<String> = match self.get("guided", "params") {
            None => Vec::new(),
            Some(Value::String(s)) => s
                .split('+')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect(),
            Some(Value::Array(items)) => {
                let mut out = Vec::new();
                for item in items {
                    match item {
                        Value::String(s) => out.push(s.clone()),
                        other => {
                            return Err(self.err(
                                "guided",
                                "params",
                                format!(
                                    "expected hyperparameter names, found {}",
                                    value_kind(other)
                                ),
                            ))
                        }
                    }
                }
                out
            }
            Some(v) => {
                return Err(self.err(
                    "guided",
                    "params",
                    format!("expected a list, found {}", value_kind(v)),
                ))
            }
        };
        let mut parsed: Vec<HyperName> = Vec::new();
        for n in names {
            let h: HyperName = n
                .parse()
                .map_err(|e: guided_core::Error| self.err("guided", "params", e.to_string()))?;
            if parsed.contains(&h) {
                return Err(self.err("guided", "params", format!("`{h}` listed twice")));
            }
            parsed.push(h);
        }
        parsed.sort();
        Ok(parsed)
    }

    /// Fill defaults and validate.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        for section in ["task", "optimizer"] {
            if !self.has_section(section) {
                return Err(ConfigError {
                    line: None,
                    key: section.into(),
                    message: "missing required section".into(),
                });
            }
        }

        let kind: TaskKind = self.parse_enum("task", "kind", true)?.expect("required");
        let batch_size = self.usize_or("task", "batch_size", 32)?;
        let task = TaskSection {
            kind,
            dim: self.usize_or("task", "dim", 10)?,
            n_train: self.usize_or("task", "n_train", batch_size * 100)?,
            batch_size,
            noise_std: self.f64_or("task", "noise_std", 0.1)?,
            seed: self.u64_or("task", "seed", 0)?,
            condition_number: self.f64_or("task", "condition_number", 100.0)?,
            hidden: self.usize_or("task", "hidden", 8)?,
            guidance_batches: self.usize_or("task", "guidance_batches", 1)?,
        };
        let spec = task_spec(&task);
        spec.validate()
            .map_err(|e| self.err("task", "n_train", e.to_string()))?;
        if task.dim == 0 {
            return Err(self.err("task", "dim", "must be >= 1"));
        }
        if !(task.noise_std >= 0.0 && task.noise_std.is_finite()) {
            return Err(self.err("task", "noise_std", "must be a finite value >= 0"));
        }

        let okind: OptimizerKind = self
            .parse_enum("optimizer", "kind", true)?
            .expect("required");
        let d = HyperParams::defaults(okind);
        let mut schedule: Schedule = self
            .parse_enum("optimizer", "schedule", false)?
            .unwrap_or(Schedule::Constant);
        match &mut schedule {
            Schedule::Constant => {}
            Schedule::WarmupRsqrt { warmup_steps } => {
                *warmup_steps = self.u64_or("optimizer", "warmup_steps", 1000)?
            }
            Schedule::ConstThenRsqrt { hold_steps } => {
                *hold_steps = self.u64_or("optimizer", "hold_steps", 1000)?
            }
        }
        let optimizer = OptimizerSection {
            kind: okind,
            base_lr: self.f64_or("optimizer", "base_lr", d.base_lr)?,
            beta1: self.f64_or("optimizer", "beta1", d.beta1)?,
            beta2: self.f64_or("optimizer", "beta2", d.beta2)?,
            eps: self.f64_or("optimizer", "eps", d.eps)?,
            decay_rate: self.f64_or("optimizer", "decay_rate", d.decay_rate)?,
            weight_decay: self.f64_or("optimizer", "weight_decay", d.weight_decay)?,
            schedule,
        };
        let check = |key: &str, ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(self.err("optimizer", key, what.to_string()))
            }
        };
        check(
            "base_lr",
            optimizer.base_lr > 0.0 && optimizer.base_lr.is_finite(),
            "must be > 0",
        )?;
        check(
            "beta1",
            optimizer.beta1 > 0.0 && optimizer.beta1 < 1.0,
            "must lie in (0, 1)",
        )?;
        check(
            "beta2",
            optimizer.beta2 > 0.0 && optimizer.beta2 < 1.0,
            "must lie in (0, 1)",
        )?;
        check("eps", optimizer.eps > 0.0, "must be > 0")?;
        check("decay_rate", optimizer.decay_rate > 0.0, "must be > 0")?;
        check(
            "weight_decay",
            optimizer.weight_decay >= 0.0,
            "must be >= 0",
        )?;
        schedule.validate().map_err(|e| {
            let key = if matches!(schedule, Schedule::WarmupRsqrt { .. }) {
                "warmup_steps"
            } else {
                "hold_steps"
            };
            self.err("optimizer", key, e.to_string())
        })?;

        let guidance = match self.str_opt("guided", "guidance")?.as_deref() {
            None | Some("fixed") => GuidanceMode::Fixed,
            Some("resampled") => GuidanceMode::Resampled,
            Some(other) => {
                return Err(self.err(
                    "guided",
                    "guidance",
                    format!("expected fixed or resampled, got `{other}`"),
                ))
            }
        };
        let guided = GuidedSection {
            params: self.hyper_names()?,
            meta_lr: self.f64_or("guided", "meta_lr", 0.0)?,
            init_alpha: self.f64_or("guided", "init_alpha", 1.0)?,
            init_beta1: self.f64_or("guided", "init_beta1", optimizer.beta1)?,
            trust_ratio_grad: self.bool_or("guided", "trust_ratio_grad", true)?,
            bias_correction_grad: self.bool_or("guided", "bias_correction_grad", true)?,
            guidance,
        };
        if !(guided.meta_lr >= 0.0 && guided.meta_lr.is_finite()) {
            return Err(self.err(
                "guided",
                "meta_lr",
                format!("must be >= 0, got {}", guided.meta_lr),
            ));
        }
        if !(guided.init_alpha > 0.0 && guided.init_alpha.is_finite()) {
            return Err(self.err("guided", "init_alpha", "must be > 0"));
        }
        if !(guided.init_beta1 > 0.0 && guided.init_beta1 < 1.0) {
            return Err(self.err("guided", "init_beta1", "must lie in (0, 1)"));
        }

        let steps = self.u64_or("train", "steps", 1000)?;
        if steps == 0 {
            return Err(self.err("train", "steps", "must be >= 1"));
        }
        let default_eval = if steps % 10 == 0 { steps / 10 } else { steps };
        let eval_every = self.u64_or("train", "eval_every", default_eval)?;
        if eval_every > 0 && steps % eval_every != 0 {
            return Err(self.err(
                "train",
                "eval_every",
                format!("{eval_every} does not divide steps = {steps}"),
            ));
        }
        let target_dev_loss = self.opt_f64("train", "target_dev_loss")?;
        let train = TrainSection {
            steps,
            eval_every,
            target_dev_loss,
        };
        let output_dir = PathBuf::from(
            self.str_opt("output", "dir")?
                .unwrap_or_else(|| "out".to_string()),
        );

        let cfg = ExperimentConfig {
            task,
            optimizer,
            guided,
            train,
            output_dir,
        };
        cfg.train_config().validate().map_err(|e| ConfigError {
            line: None,
            key: "config".into(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }
}

/// Parse and validate a config file's text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    RawConfig::parse(text)?.resolve()
}

fn task_spec(t: &TaskSection) -> TaskSpec {
    let mut spec = TaskSpec::new(t.kind, t.dim, t.n_train, t.batch_size, t.noise_std);
    spec.condition_number = t.condition_number;
    spec.hidden = t.hidden;
    spec.guidance_batches = t.guidance_batches;
    spec
}

fn float(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    pub fn task_spec(&self) -> TaskSpec {
        task_spec(&self.task)
    }

    /// Training configuration; guided hyperparameters start from their
    /// `init_*` values and unguided ones keep the optimizer section's values.
    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        let g = &self.guided;
        let mut cfg = TrainConfig::new(o.kind, self.train.steps);
        cfg.hypers = HyperParams {
            base_lr: o.base_lr,
            alpha_scalar: g.init_alpha,
            beta1: if g.params.contains(&HyperName::Beta1) {
                g.init_beta1
            } else {
                o.beta1
            },
            beta2: o.beta2,
            eps: o.eps,
            decay_rate: o.decay_rate,
            weight_decay: o.weight_decay,
        };
        cfg.schedule = o.schedule;
        cfg.meta = MetaConfig::guiding(&g.params, g.meta_lr);
        cfg.eval_every = self.train.eval_every;
        cfg.bias_correction_grad = g.bias_correction_grad;
        cfg.trust_ratio_grad = g.trust_ratio_grad;
        cfg.guidance = g.guidance;
        cfg
    }

    /// Canonical text form with every default spelled out. Parsing it
    /// yields the same config.
    pub fn to_echo(&self) -> String {
        let mut s = String::new();
        let t = &self.task;
        let _ = writeln!(s, "[task]");
        let _ = writeln!(s, "kind = \"{}\"", t.kind);
        let _ = writeln!(s, "dim = {}", t.dim);
        let _ = writeln!(s, "n_train = {}", t.n_train);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "noise_std = {}", float(t.noise_std));
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "condition_number = {}", float(t.condition_number));
        let _ = writeln!(s, "hidden = {}", t.hidden);
        let _ = writeln!(s, "guidance_batches = {}", t.guidance_batches);

        let o = &self.optimizer;
        let _ = writeln!(s, "\n[optimizer]");
        let _ = writeln!(s, "kind = \"{}\"", o.kind);
        let _ = writeln!(s, "base_lr = {}", float(o.base_lr));
        let _ = writeln!(s, "beta1 = {}", float(o.beta1));
        let _ = writeln!(s, "beta2 = {}", float(o.beta2));
        let _ = writeln!(s, "eps = {}", float(o.eps));
        let _ = writeln!(s, "decay_rate = {}", float(o.decay_rate));
        let _ = writeln!(s, "weight_decay = {}", float(o.weight_decay));
        let _ = writeln!(s, "schedule = \"{}\"", o.schedule.kind_name());
        match o.schedule {
            Schedule::Constant => {}
            Schedule::WarmupRsqrt { warmup_steps } => {
                let _ = writeln!(s, "warmup_steps = {warmup_steps}");
            }
            Schedule::ConstThenRsqrt { hold_steps } => {
                let _ = writeln!(s, "hold_steps = {hold_steps}");
            }
        }

        let g = &self.guided;
        let names: Vec<String> = g.params.iter().map(|p| format!("\"{p}\"")).collect();
        let _ = writeln!(s, "\n[guided]");
        let _ = writeln!(s, "params = [{}]", names.join(", "));
        let _ = writeln!(s, "meta_lr = {}", float(g.meta_lr));
        let _ = writeln!(s, "init_alpha = {}", float(g.init_alpha));
        let _ = writeln!(s, "init_beta1 = {}", float(g.init_beta1));
        let _ = writeln!(s, "trust_ratio_grad = {}", g.trust_ratio_grad);
        let _ = writeln!(s, "bias_correction_grad = {}", g.bias_correction_grad);
        let mode = match g.guidance {
            GuidanceMode::Fixed => "fixed",
            GuidanceMode::Resampled => "resampled",
        };
        let _ = writeln!(s, "guidance = \"{mode}\"");

        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "steps = {}", self.train.steps);
        let _ = writeln!(s, "eval_every = {}", self.train.eval_every);
        if let Some(target) = self.train.target_dev_loss {
            let _ = writeln!(s, "target_dev_loss = {}", float(target));
        }

        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {:?}", self.output_dir.to_string_lossy());
        s
    }
}
