use std::io::{self, BufRead, Write};

use crate::error::{Error, Result};
use crate::numerics::ParamVector;

/// Column header of a serialized run.
pub const RUNLOG_HEADER: &str = "step,train_loss,guidance_loss,dev_loss,alpha_scalar,beta1,raw_alpha,raw_beta1,hypergrad_alpha,hypergrad_beta1,lr_effective";

/// One training step. Hyperparameter values are the ones used by this step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Loss of the training batch at the pre-step parameters.
    pub train_loss: f64,
    /// Guidance loss at the post-step parameters.
    pub guidance_loss: f64,
    /// Dev loss at the post-step parameters, on eval steps only.
    pub dev_loss: Option<f64>,
    pub alpha_scalar: f64,
    pub beta1: f64,
    pub raw_alpha: Option<f64>,
    pub raw_beta1: Option<f64>,
    pub hypergrad_alpha: Option<f64>,
    pub hypergrad_beta1: Option<f64>,
    pub lr_effective: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    /// Parameters after the last step; not serialized.
    pub final_params: Option<ParamVector>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

impl RunLog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.records.last()
    }

    /// Dev losses as `(step, loss)` pairs.
    pub fn dev_losses(&self) -> impl Iterator<Item = (u64, f64)> + '_ {
        self.records
            .iter()
            .filter_map(|r| r.dev_loss.map(|d| (r.step, d)))
    }

    pub fn final_dev_loss(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.dev_loss)
    }

    pub fn best_dev_loss(&self) -> Option<f64> {
        self.dev_losses().map(|(_, d)| d).reduce(f64::min)
    }

    /// Mean training loss over the trailing `fraction` of steps (at least one).
    pub fn tail_train_loss(&self, fraction: f64) -> Option<f64> {
        if self.records.is_empty() {
            return None;
        }
        let n =
            ((self.records.len() as f64 * fraction).ceil() as usize).clamp(1, self.records.len());
        let tail = &self.records[self.records.len() - n..];
        Some(tail.iter().map(|r| r.train_loss).sum::<f64>() / n as f64)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{RUNLOG_HEADER}")?;
        for r in &self.records {
            writeln!(
                out,
                "{},{:?},{:?},{},{:?},{:?},{},{},{},{},{:?}",
                r.step,
                r.train_loss,
                r.guidance_loss,
                opt(r.dev_loss),
                r.alpha_scalar,
                r.beta1,
                opt(r.raw_alpha),
                opt(r.raw_beta1),
                opt(r.hypergrad_alpha),
                opt(r.hypergrad_beta1),
                r.lr_effective
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    /// Parse a run written by [`RunLog::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<RunLog> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Config("empty run log".into()))?
            .map_err(|e| Error::Config(e.to_string()))?;
        if header.trim_end() != RUNLOG_HEADER {
            return Err(Error::Config(format!(
                "unexpected run log header `{header}`"
            )));
        }
        let mut records: Vec<StepRecord> = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let lineno = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(Error::Config(format!(
                    "line {lineno}: expected 11 fields, found {}",
                    fields.len()
                )));
            }
            let req = |k: usize| -> Result<f64> {
                fields[k].parse::<f64>().map_err(|_| {
                    Error::Config(format!("line {lineno}: bad number `{}`", fields[k]))
                })
            };
            let optional = |k: usize| -> Result<Option<f64>> {
                if fields[k].is_empty() {
                    Ok(None)
                } else {
                    req(k).map(Some)
                }
            };
            let step = fields[0]
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("line {lineno}: bad step `{}`", fields[0])))?;
            if let Some(prev) = records.last() {
                if step <= prev.step {
                    return Err(Error::Config(format!("line {lineno}: steps must increase")));
                }
            }
            records.push(StepRecord {
                step,
                train_loss: req(1)?,
                guidance_loss: req(2)?,
                dev_loss: optional(3)?,
                alpha_scalar: req(4)?,
                beta1: req(5)?,
                raw_alpha: optional(6)?,
                raw_beta1: optional(7)?,
                hypergrad_alpha: optional(8)?,
                hypergrad_beta1: optional(9)?,
                lr_effective: req(10)?,
            });
        }
        Ok(RunLog {
            records,
            final_params: None,
        })
    }
}
