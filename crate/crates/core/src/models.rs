//! Small differentiable training problems with exact analytic gradients.
//!
//! Each task owns a synthetic dataset split into a cycled training stream,
//! held-out guidance batches and a dev batch. The splits never share
//! examples.

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::{dot_slices, Layout, ParamVector, Rng, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    /// Ill-conditioned diagonal quadratic with additive gradient noise.
    Quadratic,
    /// Logistic regression on two Gaussian blobs.
    Logreg,
    /// One hidden tanh layer regressing a random teacher network.
    Mlp,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Quadratic, TaskKind::Logreg, TaskKind::Mlp];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Quadratic => "quadratic",
            TaskKind::Logreg => "logreg",
            TaskKind::Mlp => "mlp",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(TaskKind::Quadratic),
            "logreg" => Ok(TaskKind::Logreg),
            "mlp" => Ok(TaskKind::Mlp),
            other => Err(Error::Config(format!("unknown task kind `{other}`"))),
        }
    }
}

/// Everything needed to generate a task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub dim: usize,
    /// Total number of generated examples, including the held-out splits.
    pub n_train: usize,
    pub batch_size: usize,
    pub noise_std: f64,
    /// Ratio of largest to smallest curvature (quadratic only).
    pub condition_number: f64,
    /// Hidden width (mlp only).
    pub hidden: usize,
    /// Number of held-out guidance batches.
    pub guidance_batches: usize,
}

impl TaskSpec {
    pub fn new(
        kind: TaskKind,
        dim: usize,
        n_train: usize,
        batch_size: usize,
        noise_std: f64,
    ) -> Self {
        TaskSpec {
            kind,
            dim,
            n_train,
            batch_size,
            noise_std,
            condition_number: 100.0,
            hidden: 8,
            guidance_batches: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("task dim must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.guidance_batches == 0 {
            return Err(Error::Config("guidance_batches must be at least 1".into()));
        }
        let needed = (2 + self.guidance_batches).max(3) * self.batch_size;
        if self.n_train < needed {
            return Err(Error::Config(format!(
                "n_train = {} cannot supply train, guidance and dev batches of {} (need at least {needed})",
                self.n_train, self.batch_size
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::Config(format!(
                "noise_std must be >= 0, got {}",
                self.noise_std
            )));
        }
        if self.kind == TaskKind::Quadratic && !(self.condition_number >= 1.0) {
            return Err(Error::Config("condition_number must be >= 1".into()));
        }
        if self.kind == TaskKind::Mlp && self.hidden == 0 {
            return Err(Error::Config("hidden width must be at least 1".into()));
        }
        Ok(())
    }
}

/// A mini-batch: row-major `inputs` plus one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    targets: Vec<f64>,
    n_features: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, n_features: usize) -> Result<Self> {
        if n_features == 0 || inputs.len() != targets.len() * n_features {
            return Err(Error::Config(format!(
                "batch with {} inputs cannot hold {} rows of {n_features} features",
                inputs.len(),
                targets.len()
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Config("batch entries must be finite".into()));
        }
        Ok(Batch {
            inputs,
            targets,
            n_features,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Debug dump: one CSV row per example, features then target.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.n_features)
            .map(|j| format!("x{j}"))
            .chain(std::iter::once("target".to_string()))
            .collect();
        writeln!(out, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut fields: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            fields.push(format!("{:?}", self.targets[i]));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// A generated training problem. Immutable once built.
#[derive(Debug, Clone)]
pub struct Task {
    spec: TaskSpec,
    layout: Arc<Layout>,
    train_batches: Vec<Batch>,
    guidance_batches: Vec<Batch>,
    dev_batch: Batch,
    init_params: ParamVector,
    /// Diagonal curvature (quadratic only).
    curvature: Vec<f64>,
}

impl Task {
    pub fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    pub fn kind(&self) -> TaskKind {
        self.spec.kind
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn train_batches(&self) -> &[Batch] {
        &self.train_batches
    }

    /// The first held-out guidance batch; the one used in fixed-guidance mode.
    pub fn guidance_batch(&self) -> &Batch {
        &self.guidance_batches[0]
    }

    pub fn guidance_batches(&self) -> &[Batch] {
        &self.guidance_batches
    }

    pub fn dev_batch(&self) -> &Batch {
        &self.dev_batch
    }

    pub fn init_params(&self) -> &ParamVector {
        &self.init_params
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn noise_std(&self) -> f64 {
        self.spec.noise_std
    }

    /// Batch-mean loss only.
    pub fn loss(&self, params: &ParamVector, batch: &Batch) -> Result<f64> {
        self.evaluate(params, batch, None)
    }

    /// Batch-mean loss and its exact gradient.
    pub fn loss_and_grad(&self, params: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector)> {
        let mut grad = ParamVector::zeros(&self.layout);
        let loss = self.evaluate(params, batch, Some(grad.values_mut()))?;
        if let Some(i) = grad.first_non_finite() {
            return Err(Error::numeric(
                format!("{} gradient", self.spec.kind),
                format!("non-finite gradient entry at index {i}"),
            ));
        }
        Ok((loss, grad))
    }

    fn evaluate(
        &self,
        params: &ParamVector,
        batch: &Batch,
        grad: Option<&mut [f64]>,
    ) -> Result<f64> {
        if params.layout().as_ref() != self.layout.as_ref() {
            return Err(Error::LayoutMismatch(format!(
                "params do not match the {} task layout",
                self.spec.kind
            )));
        }
        if batch.n_features() != self.spec.dim {
            return Err(Error::LayoutMismatch(format!(
                "batch has {} features, task expects {}",
                batch.n_features(),
                self.spec.dim
            )));
        }
        let loss = match self.spec.kind {
            TaskKind::Quadratic => quadratic_loss(&self.curvature, params.values(), batch, grad),
            TaskKind::Logreg => logreg_loss(self.spec.dim, params.values(), batch, grad),
            TaskKind::Mlp => mlp_loss(
                self.spec.dim,
                self.spec.hidden,
                params.values(),
                batch,
                grad,
            ),
        };
        if !loss.is_finite() {
            return Err(Error::numeric(
                format!("{} loss", self.spec.kind),
                format!("loss evaluated to {loss}"),
            ));
        }
        Ok(loss)
    }
}

/// Free-function form of [`Task::loss_and_grad`].
pub fn loss_and_grad(
    task: &Task,
    params: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    task.loss_and_grad(params, batch)
}

// Quadratic: L = 1/2 sum_j a_j d_j^2 + sum_j xi_j d_j with d = theta (optimum at
// the origin) and xi the batch-mean of the per-example noise rows.
fn quadratic_loss(curv: &[f64], theta: &[f64], batch: &Batch, grad: Option<&mut [f64]>) -> f64 {
    let n = batch.len() as f64;
    let dim = curv.len();
    let mut xi = vec![0.0; dim];
    for i in 0..batch.len() {
        for (acc, v) in xi.iter_mut().zip(batch.row(i)) {
            *acc += v;
        }
    }
    for v in &mut xi {
        *v /= n;
    }
    let mut loss = 0.0;
    for j in 0..dim {
        loss += 0.5 * curv[j] * theta[j] * theta[j] + xi[j] * theta[j];
    }
    if let Some(g) = grad {
        for j in 0..dim {
            g[j] = curv[j] * theta[j] + xi[j];
        }
    }
    loss
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// Params: w (dim) then b (1). Mean binary cross-entropy with logits.
fn logreg_loss(dim: usize, theta: &[f64], batch: &Batch, mut grad: Option<&mut [f64]>) -> f64 {
    let n = batch.len() as f64;
    let (w, b) = theta.split_at(dim);
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let x = batch.row(i);
        let y = batch.targets()[i];
        let z = dot_slices(w, x) + b[0];
        loss += z.max(0.0) - y * z + (-z.abs()).exp().ln_1p();
        if let Some(g) = grad.as_deref_mut() {
            let r = (sigmoid(z) - y) / n;
            for (gj, xj) in g[..dim].iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[dim] += r;
        }
    }
    loss / n
}

// Params: w1 (hidden x dim), b1 (hidden), w2 (1 x hidden), b2 (1).
// Mean squared error of w2 . tanh(w1 x + b1) + b2 against the target.
fn mlp_loss(
    dim: usize,
    hidden: usize,
    theta: &[f64],
    batch: &Batch,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = batch.len() as f64;
    let (w1, rest) = theta.split_at(hidden * dim);
    let (b1, rest) = rest.split_at(hidden);
    let (w2, b2) = rest.split_at(hidden);
    let mut act = vec![0.0; hidden];
    let mut loss = 0.0;
    for i in 0..batch.len() {
        let x = batch.row(i);
        for k in 0..hidden {
            act[k] = (dot_slices(&w1[k * dim..(k + 1) * dim], x) + b1[k]).tanh();
        }
        let out = dot_slices(w2, &act) + b2[0];
        let err = out - batch.targets()[i];
        loss += err * err;
        if let Some(g) = grad.as_deref_mut() {
            let d_out = 2.0 * err / n;
            let (gw1, g_rest) = g.split_at_mut(hidden * dim);
            let (gb1, g_rest) = g_rest.split_at_mut(hidden);
            let (gw2, gb2) = g_rest.split_at_mut(hidden);
            for k in 0..hidden {
                gw2[k] += d_out * act[k];
                let d_pre = d_out * w2[k] * (1.0 - act[k] * act[k]);
                gb1[k] += d_pre;
                for (gw, xj) in gw1[k * dim..(k + 1) * dim].iter_mut().zip(x) {
                    *gw += d_pre * xj;
                }
            }
            gb2[0] += d_out;
        }
    }
    loss / n
}

fn task_layout(spec: &TaskSpec) -> Result<Layout> {
    let dim = spec.dim;
    match spec.kind {
        TaskKind::Quadratic => Layout::new([("theta", Shape::Vector, dim)]),
        TaskKind::Logreg => Layout::new([("w", Shape::Vector, dim), ("b", Shape::Vector, 1)]),
        TaskKind::Mlp => {
            let h = spec.hidden;
            Layout::new([
                ("w1", Shape::Matrix { rows: h, cols: dim }, h * dim),
                ("b1", Shape::Vector, h),
                ("w2", Shape::Matrix { rows: 1, cols: h }, h),
                ("b2", Shape::Vector, 1),
            ])
        }
    }
}

// Stream ids carved out of the task seed.
const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_TEACHER: u64 = 3;

/// Generate a task from `spec`, drawing everything from `rng`'s seed.
///
/// The generated examples are cut into whole batches; the first
/// `guidance_batches` become the guidance set, the next one the dev batch and
/// the rest the training stream. Leftover examples are dropped.
pub fn make_task(spec: &TaskSpec, rng: &Rng) -> Result<Task> {
    spec.validate()?;
    let layout = Arc::new(task_layout(spec)?);
    let dim = spec.dim;
    let n_batches = spec.n_train / spec.batch_size;
    let mut data_rng = rng.fork(STREAM_DATA);
    let mut init_rng = rng.fork(STREAM_INIT);

    let mut curvature = Vec::new();
    let mut batches = Vec::with_capacity(n_batches);
    let init_values: Vec<f64>;

    match spec.kind {
        TaskKind::Quadratic => {
            // Curvatures log-spaced from 1 to the condition number.
            curvature = (0..dim)
                .map(|j| {
                    if dim == 1 {
                        1.0
                    } else {
                        spec.condition_number.powf(j as f64 / (dim - 1) as f64)
                    }
                })
                .collect();
            // Per-example noise scaled like the curvature, so its covariance is
            // proportional to the Hessian.
            let scale: Vec<f64> = curvature
                .iter()
                .map(|a| spec.noise_std * a.sqrt())
                .collect();
            for _ in 0..n_batches {
                let mut inputs = Vec::with_capacity(spec.batch_size * dim);
                for _ in 0..spec.batch_size {
                    for s in &scale {
                        inputs.push(s * data_rng.gaussian());
                    }
                }
                batches.push(Batch::new(inputs, vec![0.0; spec.batch_size], dim)?);
            }
            init_values = curvature
                .iter()
                .map(|a| init_rng.gaussian() / a.sqrt())
                .collect();
        }
        TaskKind::Logreg => {
            let mut direction = data_rng.draw_gaussian(dim);
            let norm = dot_slices(&direction, &direction).sqrt();
            for d in &mut direction {
                *d /= norm;
            }
            let spread = if spec.noise_std > 0.0 {
                spec.noise_std
            } else {
                1.0
            };
            for _ in 0..n_batches {
                let mut labels: Vec<f64> = (0..spec.batch_size).map(|i| (i % 2) as f64).collect();
                data_rng.shuffle(&mut labels);
                let mut inputs = Vec::with_capacity(spec.batch_size * dim);
                for &y in &labels {
                    let sign = 2.0 * y - 1.0;
                    for d in &direction {
                        inputs.push(sign * d + spread * data_rng.gaussian());
                    }
                }
                batches.push(Batch::new(inputs, labels, dim)?);
            }
            init_values = vec![0.0; dim + 1];
        }
        TaskKind::Mlp => {
            let h = spec.hidden;
            let mut teacher_rng = rng.fork(STREAM_TEACHER);
            let tw1: Vec<f64> = teacher_rng
                .draw_gaussian(h * dim)
                .into_iter()
                .map(|v| v * (2.0 / dim as f64).sqrt())
                .collect();
            let tb1 = teacher_rng.draw_gaussian(h);
            let tw2: Vec<f64> = teacher_rng
                .draw_gaussian(h)
                .into_iter()
                .map(|v| v / (h as f64).sqrt())
                .collect();
            let mut teacher = tw1;
            teacher.extend(tb1);
            teacher.extend(tw2);
            teacher.push(0.0);
            for _ in 0..n_batches {
                let inputs = data_rng.draw_gaussian(spec.batch_size * dim);
                let mut targets = Vec::with_capacity(spec.batch_size);
                for i in 0..spec.batch_size {
                    let x = &inputs[i * dim..(i + 1) * dim];
                    targets.push(
                        mlp_forward(dim, h, &teacher, x) + spec.noise_std * data_rng.gaussian(),
                    );
                }
                batches.push(Batch::new(inputs, targets, dim)?);
            }
            let mut init = Vec::with_capacity(layout.len());
            init.extend(
                init_rng
                    .draw_gaussian(h * dim)
                    .into_iter()
                    .map(|v| v / (dim as f64).sqrt()),
            );
            init.extend(std::iter::repeat_n(0.0, h));
            init.extend(
                init_rng
                    .draw_gaussian(h)
                    .into_iter()
                    .map(|v| v / (h as f64).sqrt()),
            );
            init.push(0.0);
            init_values = init;
        }
    }

    let mut rest = batches.into_iter();
    let guidance_batches: Vec<Batch> = rest.by_ref().take(spec.guidance_batches).collect();
    let dev_batch = rest.next().expect("validated batch count");
    let train_batches: Vec<Batch> = rest.collect();
    let init_params = ParamVector::from_values(&layout, init_values)?;
    Ok(Task {
        spec: spec.clone(),
        layout,
        train_batches,
        guidance_batches,
        dev_batch,
        init_params,
        curvature,
    })
}

fn mlp_forward(dim: usize, hidden: usize, theta: &[f64], x: &[f64]) -> f64 {
    let w1 = &theta[..hidden * dim];
    let b1 = &theta[hidden * dim..hidden * dim + hidden];
    let w2 = &theta[hidden * dim + hidden..hidden * dim + 2 * hidden];
    let b2 = theta[hidden * dim + 2 * hidden];
    let mut out = b2;
    for k in 0..hidden {
        out += w2[k] * (dot_slices(&w1[k * dim..(k + 1) * dim], x) + b1[k]).tanh();
    }
    out
}

/// Endless training-batch order: a fresh seeded permutation every epoch.
#[derive(Debug, Clone)]
pub struct BatchOrder {
    rng: Rng,
    n: usize,
    perm: Vec<usize>,
    pos: usize,
}

impl BatchOrder {
    pub fn new(n_batches: usize, rng: Rng) -> Self {
        assert!(n_batches > 0, "batch order over zero batches");
        BatchOrder {
            rng,
            n: n_batches,
            perm: Vec::new(),
            pos: 0,
        }
    }

    pub fn next_index(&mut self) -> usize {
        if self.pos == self.perm.len() {
            self.perm = self.rng.permutation(self.n);
            self.pos = 0;
        }
        let i = self.perm[self.pos];
        self.pos += 1;
        i
    }
}
