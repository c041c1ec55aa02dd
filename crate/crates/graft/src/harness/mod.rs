//! Synthetic tasks and small rectifier networks trained from a shared
//! initialization, used to compare fusion methods at desk scale.
//!
//! A model is a checkpoint of dense layers `layer0, layer1, …` (role `mlp`).
//! The first layer sees the input with a constant `1` appended, which gives it
//! a bias column. Hidden layers apply `max(0, x)`; the last layer is linear and
//! has a single output.

mod bench;

pub use bench::{
    merge_with, method_gate_config, run_comparison, traced_compatibility, BenchConfig,
    ComparisonReport, ExpertLosses, Method, MethodRow, MethodTiming, PairCompatibility,
    PairOutcome, PairSpec, Timings,
};

use std::f64::consts::PI;

use graft_core::{Checkpoint, Matrix, TensorRole};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRAIN_STREAM: u64 = 0;
const EVAL_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
/// Classification samples closer than this to the decision boundary are
/// redrawn, so both classes are separable with a margin.
const CLASS_MARGIN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Target `sin(π·mean(x))`, squared loss.
    RegressionSin,
    /// Target `cos(π·mean(x))`, squared loss.
    RegressionCos,
    /// Label `sign(x0 + x1)`, hinge loss.
    BinaryClassA,
    /// Label `sign(x0 − x1)`, hinge loss.
    BinaryClassB,
}

impl TaskKind {
    pub fn is_classification(self) -> bool {
        matches!(self, TaskKind::BinaryClassA | TaskKind::BinaryClassB)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::RegressionSin => "regression_sin",
            TaskKind::RegressionCos => "regression_cos",
            TaskKind::BinaryClassA => "binary_class_a",
            TaskKind::BinaryClassB => "binary_class_b",
        }
    }

    /// The raw quantity whose sign (classification) or transform (regression)
    /// gives the target.
    fn target(self, x: &[f32]) -> f64 {
        let mean = || x.iter().map(|&v| v as f64).sum::<f64>() / x.len() as f64;
        match self {
            TaskKind::RegressionSin => (PI * mean()).sin(),
            TaskKind::RegressionCos => (PI * mean()).cos(),
            TaskKind::BinaryClassA => x[0] as f64 + x[1] as f64,
            TaskKind::BinaryClassB => x[0] as f64 - x[1] as f64,
        }
    }

    fn loss(self, prediction: f64, target: f64) -> f64 {
        if self.is_classification() {
            (1.0 - target * prediction).max(0.0)
        } else {
            (prediction - target).powi(2)
        }
    }

    /// Derivative of [`Self::loss`] with respect to the prediction.
    fn loss_grad(self, prediction: f64, target: f64) -> f64 {
        if self.is_classification() {
            if target * prediction < 1.0 {
                -target
            } else {
                0.0
            }
        } else {
            2.0 * (prediction - target)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticTask {
    pub kind: TaskKind,
    pub seed: u64,
    pub input_dim: usize,
    /// Training-split size; the held-out split has `max(1, size / 4)` samples.
    pub size: usize,
}

/// Inputs with their targets (`±1` labels for classification).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

impl SyntheticTask {
    pub fn validate(&self) -> Result<()> {
        let min_dim = if self.kind.is_classification() { 2 } else { 1 };
        if self.input_dim < min_dim {
            return Err(Error::Config(format!(
                "{} needs input_dim ≥ {min_dim}, got {}",
                self.kind.as_str(),
                self.input_dim
            )));
        }
        if self.size == 0 {
            return Err(Error::Config("task size must be at least 1".into()));
        }
        Ok(())
    }

    fn generate(&self, stream: u64, count: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        let mut inputs = Vec::with_capacity(count);
        let mut targets = Vec::with_capacity(count);
        while inputs.len() < count {
            let x: Vec<f32> = (0..self.input_dim)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) as f32)
                .collect();
            let t = self.kind.target(&x);
            if self.kind.is_classification() {
                if t.abs() < CLASS_MARGIN {
                    continue;
                }
                targets.push(t.signum());
            } else {
                targets.push(t);
            }
            inputs.push(x);
        }
        Dataset { inputs, targets }
    }

    pub fn train_split(&self) -> Result<Dataset> {
        self.validate()?;
        Ok(self.generate(TRAIN_STREAM, self.size))
    }

    pub fn eval_split(&self) -> Result<Dataset> {
        self.validate()?;
        Ok(self.generate(EVAL_STREAM, (self.size / 4).max(1)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpertSpec {
    /// Hidden-layer widths; the output layer (width 1) is implied.
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub learning_rate: f64,
    /// Initialization seed. Experts meant to be merged share it.
    pub seed: u64,
    pub task: SyntheticTask,
}

impl ExpertSpec {
    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// `(rows, cols)` of each layer, input augmentation included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut fan_in = self.task.input_dim + 1;
        let mut shapes = Vec::with_capacity(self.hidden.len() + 1);
        for &h in self.hidden.iter().chain(std::iter::once(&1)) {
            shapes.push((h, fan_in));
            fan_in = h;
        }
        shapes
    }
}

pub fn layer_name(index: usize) -> String {
    format!("layer{index}")
}

/// Glorot-uniform weights drawn from `seed`, independent of the task.
pub fn init_model(spec: &ExpertSpec) -> Result<Checkpoint> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(INIT_STREAM);
    let mut ckpt = Checkpoint::new();
    for (i, (rows, cols)) in spec.layer_shapes().into_iter().enumerate() {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| ((rng.random::<f64>() * 2.0 - 1.0) * limit) as f32)
            .collect();
        ckpt.insert(
            layer_name(i),
            Matrix::new(rows, cols, data)?,
            TensorRole::Mlp,
        )?;
    }
    Ok(ckpt)
}

/// Layer weights widened to `f64`, checked against the task's input size.
fn layers(model: &Checkpoint, input_dim: usize) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let shape_err = |msg: String| Error::Core(graft_core::Error::Shape(msg));
    let mut fan_in = input_dim + 1;
    let mut out = Vec::with_capacity(model.len());
    for (i, e) in model.entries().iter().enumerate() {
        let (rows, cols) = e.matrix.shape();
        if cols != fan_in {
            return Err(shape_err(format!(
                "layer `{}` expects {cols} inputs, receives {fan_in}",
                e.name
            )));
        }
        if i + 1 == model.len() && rows != 1 {
            return Err(shape_err(format!(
                "output layer `{}` has {rows} outputs, expected 1",
                e.name
            )));
        }
        out.push((
            rows,
            cols,
            e.matrix.data().iter().map(|&v| v as f64).collect(),
        ));
        fan_in = rows;
    }
    if out.is_empty() {
        return Err(shape_err("model has no layers".into()));
    }
    Ok(out)
}

/// Per-layer activations for one input: entry 0 is the augmented input, the
/// last entry is the scalar output.
fn forward(layers: &[(usize, usize, Vec<f64>)], x: &[f32]) -> Vec<Vec<f64>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(
        x.iter()
            .map(|&v| v as f64)
            .chain(std::iter::once(1.0))
            .collect::<Vec<_>>(),
    );
    for (l, (rows, cols, w)) in layers.iter().enumerate() {
        let prev = &acts[l];
        let last = l + 1 == layers.len();
        let y = (0..*rows)
            .map(|r| {
                let z: f64 = w[r * cols..(r + 1) * cols]
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| a * b)
                    .sum();
                if last {
                    z
                } else {
                    z.max(0.0)
                }
            })
            .collect();
        acts.push(y);
    }
    acts
}

/// Model output for one raw (unaugmented) input.
pub fn predict(model: &Checkpoint, x: &[f32]) -> Result<f64> {
    let layers = layers(model, x.len())?;
    Ok(forward(&layers, x).last().expect("output layer")[0])
}

fn mean_loss(layers: &[(usize, usize, Vec<f64>)], kind: TaskKind, data: &Dataset) -> f64 {
    let total: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(x, &t)| kind.loss(forward(layers, x).last().expect("output")[0], t))
        .sum();
    total / data.len() as f64
}

/// Mean loss on the held-out split: squared error for regression tasks,
/// hinge loss for classification tasks.
pub fn evaluate(model: &Checkpoint, task: &SyntheticTask) -> Result<f64> {
    let data = task.eval_split()?;
    Ok(mean_loss(&layers(model, task.input_dim)?, task.kind, &data))
}

/// Mean loss on the training split.
pub fn training_loss(model: &Checkpoint, task: &SyntheticTask) -> Result<f64> {
    let data = task.train_split()?;
    Ok(mean_loss(&layers(model, task.input_dim)?, task.kind, &data))
}

/// Loss and gradient of the full training batch.
fn loss_and_grad(
    layers: &[(usize, usize, Vec<f64>)],
    kind: TaskKind,
    data: &Dataset,
) -> (f64, Vec<Vec<f64>>) {
    let n = data.len() as f64;
    let mut grads: Vec<Vec<f64>> = layers.iter().map(|(_, _, w)| vec![0.0; w.len()]).collect();
    let mut total = 0.0;
    for (x, &t) in data.inputs.iter().zip(&data.targets) {
        let acts = forward(layers, x);
        let pred = acts.last().expect("output")[0];
        total += kind.loss(pred, t);
        let mut delta = vec![kind.loss_grad(pred, t) / n];
        for l in (0..layers.len()).rev() {
            let (rows, cols, w) = &layers[l];
            let input = &acts[l];
            for r in 0..*rows {
                if delta[r] == 0.0 {
                    continue;
                }
                for c in 0..*cols {
                    grads[l][r * cols + c] += delta[r] * input[c];
                }
            }
            if l > 0 {
                delta = (0..*cols)
                    .map(|c| {
                        if input[c] <= 0.0 {
                            return 0.0;
                        }
                        (0..*rows).map(|r| delta[r] * w[r * cols + c]).sum()
                    })
                    .collect();
            }
        }
    }
    (total / n, grads)
}

/// Training record alongside the returned weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedExpert {
    pub model: Checkpoint,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Training loss before each step, followed by the loss after the last.
    pub losses: Vec<f64>,
}

/// Full-batch gradient descent from [`init_model`]. Weights are rounded to
/// `f32` after every step, and the iterate with the lowest training loss is
/// returned, so the result never scores worse than the initialization.
pub fn train_expert_detailed(spec: &ExpertSpec) -> Result<TrainedExpert> {
    let init = init_model(spec)?;
    let data = spec.task.train_split()?;
    let mut current = layers(&init, spec.task.input_dim)?;
    let mut losses = Vec::with_capacity(spec.steps + 1);
    let mut best = (f64::INFINITY, current.clone());

    for step in 0..=spec.steps {
        let (loss, grads) = loss_and_grad(&current, spec.task.kind, &data);
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became {loss} at step {step}"
            )));
        }
        losses.push(loss);
        if loss < best.0 {
            best = (loss, current.clone());
        }
        if step == spec.steps {
            break;
        }
        for ((_, _, w), g) in current.iter_mut().zip(&grads) {
            for (wi, gi) in w.iter_mut().zip(g) {
                let next = *wi - spec.learning_rate * gi;
                if !next.is_finite() || next.abs() > f32::MAX as f64 {
                    return Err(Error::Training(format!("weights diverged at step {step}")));
                }
                *wi = next as f32 as f64;
            }
        }
    }

    let mut model = Checkpoint::new();
    for (i, (rows, cols, w)) in best.1.into_iter().enumerate() {
        let data = w.into_iter().map(|v| v as f32).collect();
        model.insert(
            layer_name(i),
            Matrix::new(rows, cols, data)?,
            TensorRole::Mlp,
        )?;
    }
    Ok(TrainedExpert {
        model,
        initial_loss: losses[0],
        final_loss: best.0,
        losses,
    })
}

pub fn train_expert(spec: &ExpertSpec) -> Result<Checkpoint> {
    train_expert_detailed(spec).map(|t| t.model)
}

/// Augments raw inputs with the constant bias feature, matching what the
/// first layer expects. Used when tracing activations.
pub fn augment(inputs: &[Vec<f32>]) -> Vec<Vec<f32>> {
    inputs
        .iter()
        .map(|x| x.iter().copied().chain(std::iter::once(1.0)).collect())
        .collect()
}
