//! Activation traces stored in the checkpoint container.
//!
//! Each module becomes one tensor holding its `K` sample matrices stacked
//! vertically (`ΣB × D`). Metadata records `K`, the per-sample batch sizes of
//! each module and the sparsity threshold.

use std::path::Path;

use graft_core::{ActivationTrace, Checkpoint, Matrix, TensorRole};

use crate::error::{Error, Result};
use crate::store;

pub const SAMPLES_KEY: &str = "graft.trace.k";
pub const EPSILON_KEY: &str = "graft.trace.epsilon";
pub const BATCHES_PREFIX: &str = "graft.trace.batches.";

pub fn trace_to_checkpoint(trace: &ActivationTrace) -> Result<Checkpoint> {
    let mut ckpt = Checkpoint::new();
    for (name, samples) in trace.modules() {
        let cols = samples[0].cols();
        let rows: usize = samples.iter().map(Matrix::rows).sum();
        let data: Vec<f32> = samples
            .iter()
            .flat_map(|m| m.data().iter().copied())
            .collect();
        ckpt.insert(
            name.clone(),
            Matrix::new(rows, cols, data)?,
            TensorRole::Other,
        )?;
        let batches: Vec<String> = samples.iter().map(|m| m.rows().to_string()).collect();
        ckpt.set_metadata(format!("{BATCHES_PREFIX}{name}"), batches.join(","));
    }
    ckpt.set_metadata(SAMPLES_KEY, trace.samples().to_string());
    ckpt.set_metadata(EPSILON_KEY, format!("{:e}", trace.epsilon()));
    Ok(ckpt)
}

fn meta<'a>(ckpt: &'a Checkpoint, key: &str) -> Result<&'a str> {
    ckpt.metadata()
        .get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::Format(format!("trace metadata lacks `{key}`")))
}

/// Rebuilds a trace. `epsilon` overrides the stored threshold when given.
pub fn trace_from_checkpoint(ckpt: &Checkpoint, epsilon: Option<f64>) -> Result<ActivationTrace> {
    let k: usize = meta(ckpt, SAMPLES_KEY)?
        .parse()
        .map_err(|_| Error::Format(format!("`{SAMPLES_KEY}` is not a count")))?;
    let epsilon = match epsilon {
        Some(e) => e,
        None => meta(ckpt, EPSILON_KEY)?
            .parse()
            .map_err(|_| Error::Format(format!("`{EPSILON_KEY}` is not a number")))?,
    };
    let mut modules = Vec::with_capacity(ckpt.len());
    for e in ckpt.entries() {
        let batches = meta(ckpt, &format!("{BATCHES_PREFIX}{}", e.name))?
            .split(',')
            .map(|b| b.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("module `{}` has malformed batch sizes", e.name)))?;
        if batches.len() != k || batches.iter().sum::<usize>() != e.matrix.rows() {
            return Err(Error::Corrupt(format!(
                "module `{}`: batch sizes {batches:?} do not tile {} rows in {k} samples",
                e.name,
                e.matrix.rows()
            )));
        }
        let cols = e.matrix.cols();
        let mut row = 0;
        let mut samples = Vec::with_capacity(k);
        for b in batches {
            let slice = &e.matrix.data()[row * cols..(row + b) * cols];
            samples.push(Matrix::new(b, cols, slice.to_vec())?);
            row += b;
        }
        modules.push((e.name.clone(), samples));
    }
    Ok(ActivationTrace::new(modules, epsilon)?)
}

pub fn save_trace(trace: &ActivationTrace, path: impl AsRef<Path>) -> Result<()> {
    store::save_checkpoint(&trace_to_checkpoint(trace)?, path)
}

pub fn load_trace(path: impl AsRef<Path>, epsilon: Option<f64>) -> Result<ActivationTrace> {
    trace_from_checkpoint(&store::load_checkpoint(path)?, epsilon)
}
