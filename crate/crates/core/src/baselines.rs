//! Reference merging methods: weight averaging, task arithmetic, TIES and
//! DARE.
//!
//! All methods match tensors by name against a reference checkpoint (the
//! first expert for averaging, `init` otherwise) and return a checkpoint with
//! the reference's order, roles and metadata. Arithmetic runs in `f64` and is
//! rounded to `f32` once per element.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Per-tensor difference `θ_expert − θ_init`.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    tensors: Vec<(String, Vec<f64>)>,
}

impl TaskVector {
    pub fn new(init: &Checkpoint, expert: &Checkpoint) -> Result<Self> {
        let tensors = init
            .entries()
            .iter()
            .map(|e| {
                let other = matching(expert, &e.name, &e.matrix)?;
                let delta = other
                    .data()
                    .iter()
                    .zip(e.matrix.data())
                    .map(|(&t, &i)| t as f64 - i as f64)
                    .collect();
                Ok((e.name.clone(), delta))
            })
            .collect::<Result<_>>()?;
        Ok(Self { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
    }

    pub fn tensors(&self) -> &[(String, Vec<f64>)] {
        &self.tensors
    }

    fn map(&self, mut f: impl FnMut(&str, &[f64]) -> Vec<f64>) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(n, d)| (n.clone(), f(n, d)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TiesConfig {
    /// Fraction of largest-magnitude entries kept per task vector, in `(0, 1]`.
    pub trim_fraction: f64,
}

impl Default for TiesConfig {
    fn default() -> Self {
        Self { trim_fraction: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DareConfig {
    /// Drop probability in `[0, 1)`.
    pub drop_p: f64,
    pub seed: u64,
}

impl Default for DareConfig {
    fn default() -> Self {
        Self {
            drop_p: 0.9,
            seed: 0,
        }
    }
}

fn matching<'a>(ckpt: &'a Checkpoint, name: &str, like: &Matrix) -> Result<&'a Matrix> {
    let m = ckpt
        .matrix(name)
        .ok_or_else(|| Error::Shape(format!("tensor `{name}` missing from an expert")))?;
    if m.shape() != like.shape() {
        return Err(Error::Shape(format!(
            "tensor `{name}`: {:?} vs {:?}",
            like.shape(),
            m.shape()
        )));
    }
    Ok(m)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "lambda must be finite, got {lambda}"
        )));
    }
    Ok(())
}

fn non_empty(experts: &[Checkpoint]) -> Result<()> {
    if experts.is_empty() {
        return Err(Error::InvalidConfig(
            "at least one expert is required".into(),
        ));
    }
    Ok(())
}

/// `θ_init + λ·merged` for every tensor of `init`.
fn apply(init: &Checkpoint, lambda: f64, merged: &TaskVector) -> Result<Checkpoint> {
    let mut out = init.clone();
    for (entry, (name, delta)) in init.entries().iter().zip(merged.tensors()) {
        let values: Vec<f64> = entry
            .matrix
            .data()
            .iter()
            .zip(delta)
            .map(|(&i, &d)| i as f64 + lambda * d)
            .collect();
        let (rows, cols) = entry.matrix.shape();
        out.replace_matrix(name, Matrix::from_f64(rows, cols, &values)?);
    }
    Ok(out)
}

fn sum_vectors(vectors: &[TaskVector]) -> TaskVector {
    vectors[0].map(|name, first| {
        let mut acc = first.to_vec();
        for tv in &vectors[1..] {
            let d = tv.get(name).expect("task vectors share tensor names");
            acc.iter_mut().zip(d).for_each(|(a, &x)| *a += x);
        }
        acc
    })
}

/// Elementwise mean of the experts.
pub fn weight_average(experts: &[Checkpoint]) -> Result<Checkpoint> {
    non_empty(experts)?;
    let reference = &experts[0];
    let mut out = reference.clone();
    let n = experts.len() as f64;
    for e in reference.entries() {
        let mut acc: Vec<f64> = e.matrix.data().iter().map(|&v| v as f64).collect();
        for other in &experts[1..] {
            let m = matching(other, &e.name, &e.matrix)?;
            acc.iter_mut()
                .zip(m.data())
                .for_each(|(a, &v)| *a += v as f64);
        }
        acc.iter_mut().for_each(|a| *a /= n);
        let (rows, cols) = e.matrix.shape();
        out.replace_matrix(&e.name, Matrix::from_f64(rows, cols, &acc)?);
    }
    Ok(out)
}

/// `θ_init + λ·Σ_t (θ_t − θ_init)`.
pub fn task_arithmetic(
    init: &Checkpoint,
    experts: &[Checkpoint],
    lambda: f64,
) -> Result<Checkpoint> {
    non_empty(experts)?;
    check_lambda(lambda)?;
    let vectors = experts
        .iter()
        .map(|e| TaskVector::new(init, e))
        .collect::<Result<Vec<_>>>()?;
    apply(init, lambda, &sum_vectors(&vectors))
}

/// Number of entries TIES keeps out of `count`: `⌈fraction·count⌉`, at
/// least one. Products within 1e-9 of an integer are not rounded up.
fn keep_count(fraction: f64, count: usize) -> usize {
    let x = fraction * count as f64;
    let nearest = libm::round(x);
    let k = if libm::fabs(x - nearest) < 1e-9 {
        nearest
    } else {
        libm::ceil(x)
    };
    (k as usize).clamp(1, count)
}

/// Zeros all but the `keep` largest-magnitude entries. Equal magnitudes keep
/// the lower index first.
fn trim(delta: &[f64], keep: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..delta.len()).collect();
    order.sort_by(|&i, &j| {
        libm::fabs(delta[j])
            .total_cmp(&libm::fabs(delta[i]))
            .then(i.cmp(&j))
    });
    let mut out = vec![0.0; delta.len()];
    for &i in &order[..keep] {
        out[i] = delta[i];
    }
    out
}

/// TIES merging: trim each task vector to its largest entries, elect a sign
/// per element from the sum of the trimmed values, then average only the
/// values that agree with the elected sign. Elements whose trimmed sum is
/// zero stay at `init`.
pub fn ties_merge(
    init: &Checkpoint,
    experts: &[Checkpoint],
    cfg: &TiesConfig,
    lambda: f64,
) -> Result<Checkpoint> {
    non_empty(experts)?;
    check_lambda(lambda)?;
    if !(cfg.trim_fraction > 0.0 && cfg.trim_fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "trim_fraction must lie in (0, 1], got {}",
            cfg.trim_fraction
        )));
    }
    let trimmed = experts
        .iter()
        .map(|e| {
            TaskVector::new(init, e)
                .map(|tv| tv.map(|_, d| trim(d, keep_count(cfg.trim_fraction, d.len()))))
        })
        .collect::<Result<Vec<_>>>()?;

    let merged = trimmed[0].map(|name, _| {
        let columns: Vec<&[f64]> = trimmed
            .iter()
            .map(|tv| tv.get(name).expect("shared names"))
            .collect();
        (0..columns[0].len())
            .map(|i| {
                let total: f64 = columns.iter().map(|c| c[i]).sum();
                let elected = if total > 0.0 {
                    1.0
                } else if total < 0.0 {
                    -1.0
                } else {
                    return 0.0;
                };
                let (sum, n) = columns
                    .iter()
                    .map(|c| c[i])
                    .filter(|&v| v * elected > 0.0)
                    .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                if n == 0 {
                    0.0
                } else {
                    sum / n as f64
                }
            })
            .collect()
    });
    apply(init, lambda, &merged)
}

/// DARE: each task-vector element is dropped with probability `p` and the
/// survivors are scaled by `1/(1−p)`; the results are merged with task
/// arithmetic.
///
/// Expert `t`'s mask for tensor `name` comes from its own ChaCha8 stream keyed
/// by `(seed, name, t)`, so results do not depend on tensor processing order.
pub fn dare_merge(
    init: &Checkpoint,
    experts: &[Checkpoint],
    cfg: &DareConfig,
    lambda: f64,
) -> Result<Checkpoint> {
    non_empty(experts)?;
    check_lambda(lambda)?;
    if !(0.0..1.0).contains(&cfg.drop_p) {
        return Err(Error::InvalidConfig(format!(
            "drop_p must lie in [0, 1), got {}",
            cfg.drop_p
        )));
    }
    let scale = 1.0 / (1.0 - cfg.drop_p);
    let vectors = experts
        .iter()
        .enumerate()
        .map(|(t, e)| {
            TaskVector::new(init, e).map(|tv| {
                tv.map(|name, d| {
                    let mut stream = rng::stream(cfg.seed, name, t as u64);
                    d.iter()
                        .map(|&x| {
                            if rng::unit_f64(&mut stream) < cfg.drop_p {
                                0.0
                            } else {
                                x * scale
                            }
                        })
                        .collect()
                })
            })
        })
        .collect::<Result<Vec<_>>>()?;
    apply(init, lambda, &sum_vectors(&vectors))
}
