//! Rectified dense forward pass over a checkpoint read as a layer stack.

use alloc::format;
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::compat::ActivationTrace;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Checks that each tensor's column count equals the previous tensor's row
/// count.
fn check_chain(model: &Checkpoint) -> Result<()> {
    if model.is_empty() {
        return Err(Error::Shape("model has no layers".into()));
    }
    for pair in model.entries().windows(2) {
        if pair[1].matrix.cols() != pair[0].matrix.rows() {
            return Err(Error::Shape(format!(
                "layer `{}` expects {} inputs but `{}` produces {}",
                pair[1].name,
                pair[1].matrix.cols(),
                pair[0].name,
                pair[0].matrix.rows()
            )));
        }
    }
    Ok(())
}

/// Post-activation outputs `max(0, W·x)` of every layer, in order.
pub fn relu_forward(model: &Checkpoint, input: &[f32]) -> Result<Vec<Vec<f64>>> {
    check_chain(model)?;
    let first = &model.entries()[0];
    if input.len() != first.matrix.cols() {
        return Err(Error::Shape(format!(
            "input has {} features, layer `{}` expects {}",
            input.len(),
            first.name,
            first.matrix.cols()
        )));
    }
    let mut x: Vec<f64> = input.iter().map(|&v| v as f64).collect();
    let mut outs = Vec::with_capacity(model.len());
    for e in model.entries() {
        let y: Vec<f64> = (0..e.matrix.rows())
            .map(|i| {
                let z: f64 = e
                    .matrix
                    .row(i)
                    .iter()
                    .zip(&x)
                    .map(|(&w, &xi)| w as f64 * xi)
                    .sum();
                z.max(0.0)
            })
            .collect();
        outs.push(y.clone());
        x = y;
    }
    Ok(outs)
}

/// Records every layer's rectified activations for each input. Each sample is
/// a `1 × M` matrix, so the trace holds one module per layer with `K =
/// inputs.len()` samples.
pub fn record_trace(
    model: &Checkpoint,
    inputs: &[Vec<f32>],
    epsilon: f64,
) -> Result<ActivationTrace> {
    if inputs.is_empty() {
        return Err(Error::InvalidTrace("no input samples".into()));
    }
    let mut per_layer: Vec<Vec<Matrix>> = (0..model.len()).map(|_| Vec::new()).collect();
    for input in inputs {
        let acts = relu_forward(model, input)?;
        for (layer, a) in acts.iter().enumerate() {
            per_layer[layer].push(Matrix::from_f64(1, a.len(), a)?);
        }
    }
    let modules = model
        .names()
        .map(alloc::string::String::from)
        .zip(per_layer)
        .collect();
    ActivationTrace::new(modules, epsilon)
}
