//! Dual-gate checkpoint fusion.
//!
//! `graft-core` holds the numerical heart of the toolkit and builds without
//! `std` (an allocator is required):
//!
//! - [`Matrix`] and [`Checkpoint`], the in-memory tensor container,
//! - the local channel gate, histogram-entropy global gate and their
//!   exponential combination ([`gate`]),
//! - channel-wise and block-wise fusion of matrices and whole checkpoints,
//!   including LoRA adapters and multi-expert folds ([`fusion`]),
//! - derivative-free tuning of the gating network ([`tune`]),
//! - the weight averaging, task arithmetic, TIES and DARE baselines
//!   ([`baselines`]),
//! - activation statistics and the compatibility score ([`compat`]),
//! - a rectified dense forward pass used to record activation traces
//!   ([`forward`]).
//!
//! File formats, configuration and the command line live in the `graft`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baselines;
pub mod checkpoint;
pub mod compat;
pub mod entropy;
mod error;
pub mod forward;
pub mod fusion;
pub mod gate;
pub mod matrix;
mod rng;
pub mod tune;

pub use baselines::{
    dare_merge, task_arithmetic, ties_merge, weight_average, DareConfig, TaskVector, TiesConfig,
};
pub use checkpoint::{validate_pair, Checkpoint, Entry, PairReport, ShapeMismatch, TensorRole};
pub use compat::{
    analyze, compatibility_score, module_stats, normalize_across_modules, threshold_verdict,
    ActivationTrace, CompatibilityReport, ModuleReport, ModuleStats, NormalizedStats, Verdict,
};
pub use entropy::weight_entropy;
pub use error::{Error, Result};
pub use forward::{record_trace, relu_forward};
pub use fusion::{
    block_partition, fuse_checkpoints, fuse_checkpoints_with_summary, fuse_lora,
    fuse_lora_with_summary, fuse_many, fuse_many_lora, fuse_matrix, fuse_matrix_blockwise,
    fuse_matrix_detailed, BlockRange, MatrixFusion, TensorSummary,
};
pub use gate::{
    channel_diff, dual_gate_weights, global_gate, local_gate, DiffVector, FusionWeights,
    GateConfig, GatingNet, GlobalPrefactor, Granularity, LayerFilter,
};
pub use matrix::Matrix;
pub use tune::{tune_gating_net, TuneOutcome};
