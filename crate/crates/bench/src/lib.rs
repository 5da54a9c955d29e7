//! Fixtures shared by the criterion benches in `benches/`.

use guided_core::models::{make_task, Task, TaskKind, TaskSpec};
use guided_core::numerics::Rng;

/// Task sized like the acceptance-suite MLP (or a 20-d quadratic/logreg).
pub fn bench_task(kind: TaskKind) -> Task {
    let mut spec = TaskSpec::new(kind, 20, 32 * 50, 32, 0.1);
    spec.hidden = 32;
    make_task(&spec, &Rng::new(0, 0)).expect("valid bench task")
}
