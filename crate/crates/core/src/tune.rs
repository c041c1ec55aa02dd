//! Derivative-free tuning of the two gating-network parameters.

use alloc::format;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::fusion::fuse_checkpoints;
use crate::gate::{GateConfig, GatingNet};
use crate::rng;
use rand_chacha::rand_core::RngCore;

const INITIAL_STEP: f64 = 1.0;
const MAX_STEP: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneOutcome {
    pub net: GatingNet,
    pub initial_objective: f64,
    pub objective: f64,
    /// Proposals evaluated after the starting point.
    pub proposals: usize,
}

/// Minimizes `objective(fuse_checkpoints(base, graft, cfg with net))` over the
/// gating net `(alpha, beta)`, starting from `cfg.gate_net`.
///
/// Each of the `budget` iterations perturbs one randomly chosen coordinate by
/// `±step` and keeps the proposal only if the objective strictly drops. A
/// coordinate's step doubles after a success and halves after a failure. The
/// returned objective is never worse than the initial one, and the search is
/// deterministic for a given `seed`.
pub fn tune_gating_net<F>(
    mut objective: F,
    base: &Checkpoint,
    graft: &Checkpoint,
    cfg: &GateConfig,
    budget: usize,
    seed: u64,
) -> Result<TuneOutcome>
where
    F: FnMut(&Checkpoint) -> f64,
{
    if budget == 0 {
        return Err(Error::InvalidConfig(
            "tuning budget must be at least 1".into(),
        ));
    }
    cfg.validate()?;

    let mut eval = |net: GatingNet| -> Result<f64> {
        let fused = fuse_checkpoints(
            base,
            graft,
            &GateConfig {
                gate_net: net,
                ..*cfg
            },
        )?;
        let value = objective(&fused);
        if !value.is_finite() {
            return Err(Error::Objective(format!(
                "objective returned {value} at alpha={}, beta={}",
                net.alpha, net.beta
            )));
        }
        Ok(value)
    };

    let mut net = cfg.gate_net;
    let initial = eval(net)?;
    let mut best = initial;
    let mut steps = [INITIAL_STEP; 2];
    let mut rng = rng::stream(seed, "tune_gating_net", 0);

    for _ in 0..budget {
        let draw = rng.next_u32();
        let coord = (draw & 1) as usize;
        let sign = if draw & 2 == 0 { 1.0 } else { -1.0 };
        let mut proposal = net;
        match coord {
            0 => proposal.alpha += sign * steps[0],
            _ => proposal.beta += sign * steps[1],
        }
        let value = eval(proposal)?;
        if value < best {
            best = value;
            net = proposal;
            steps[coord] = (steps[coord] * 2.0).min(MAX_STEP);
        } else {
            steps[coord] *= 0.5;
        }
    }

    Ok(TuneOutcome {
        net,
        initial_objective: initial,
        objective: best,
        proposals: budget,
    })
}
