use crate::error::{Error, Result};
use crate::guided::{HyperName, StepSnapshot};
use crate::models::Task;

/// Central finite difference of the post-step guidance loss with respect to
/// the raw value of `name`.
pub fn fd_hypergrad_oracle(
    task: &Task,
    snap: &StepSnapshot,
    name: HyperName,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let raw = snap.guided.get(name)?.raw();
    let plus = snap
        .replay(task, &snap.hypers_at_raw(name, raw + h), false)?
        .0;
    let minus = snap
        .replay(task, &snap.hypers_at_raw(name, raw - h), false)?
        .0;
    Ok((plus - minus) / (2.0 * h))
}
