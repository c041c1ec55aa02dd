//! Dual-gate fusion of matrices and checkpoints.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::checkpoint::Checkpoint;
use crate::entropy::weight_entropy;
use crate::error::{Error, Result};
use crate::gate::{
    channel_diff, dual_gate_weights, local_gate, DiffVector, FusionWeights, GateConfig, Granularity,
};
use crate::matrix::Matrix;

/// Metadata key recording the order in which experts were folded together.
pub const FOLD_ORDER_KEY: &str = "graft.fold_order";

/// Half-open row and column ranges of one fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRange {
    pub rows: (usize, usize),
    pub cols: (usize, usize),
}

impl BlockRange {
    pub fn height(&self) -> usize {
        self.rows.1 - self.rows.0
    }

    pub fn width(&self) -> usize {
        self.cols.1 - self.cols.0
    }
}

/// Splits a `rows × cols` matrix into non-overlapping `k × k` blocks in
/// row-major block order. Blocks on the right and bottom edges are cut to the
/// remainder.
pub fn block_partition(rows: usize, cols: usize, k: usize) -> Vec<BlockRange> {
    assert!(k >= 1, "block size must be at least 1");
    let mut out = Vec::with_capacity(rows.div_ceil(k) * cols.div_ceil(k));
    for r0 in (0..rows).step_by(k) {
        for c0 in (0..cols).step_by(k) {
            out.push(BlockRange {
                rows: (r0, (r0 + k).min(rows)),
                cols: (c0, (c0 + k).min(cols)),
            });
        }
    }
    out
}

/// Everything computed while fusing one matrix pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFusion {
    pub fused: Matrix,
    pub h_base: f64,
    pub h_graft: f64,
    pub w_global: f64,
    /// Per-unit differences (rows or blocks).
    pub diff: DiffVector,
    pub w_local: Vec<f64>,
    pub weights: FusionWeights,
}

impl MatrixFusion {
    pub fn mean_w_local(&self) -> f64 {
        mean(&self.w_local)
    }

    pub fn mean_w_base(&self) -> f64 {
        mean(&self.weights.base)
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn block_diff(base: &Matrix, graft: &Matrix, blocks: &[BlockRange]) -> DiffVector {
    let cols = base.cols();
    let (b, g) = (base.data(), graft.data());
    let d = blocks
        .iter()
        .map(|blk| {
            let mut sum = 0.0;
            for r in blk.rows.0..blk.rows.1 {
                for c in blk.cols.0..blk.cols.1 {
                    let at = r * cols + c;
                    sum += libm::fabs(b[at] as f64 - g[at] as f64);
                }
            }
            sum
        })
        .collect();
    DiffVector(d)
}

/// Fuses one matrix pair and returns the intermediate gates alongside the
/// result.
pub fn fuse_matrix_detailed(
    base: &Matrix,
    graft: &Matrix,
    cfg: &GateConfig,
) -> Result<MatrixFusion> {
    cfg.validate()?;
    base.ensure_same_shape(graft, "fuse_matrix")?;

    let h_base = weight_entropy(base, cfg.bins)?;
    let h_graft = weight_entropy(graft, cfg.bins)?;
    let w_global = cfg.global_weight(h_base, h_graft);

    let (rows, cols) = base.shape();
    let (b, g) = (base.data(), graft.data());
    let mut out = alloc::vec![0.0f64; b.len()];

    let (diff, w_local, weights) = match cfg.granularity {
        Granularity::Channel => {
            let diff = channel_diff(base, graft)?;
            let w_local = local_gate(&diff, &cfg.gate_net)?;
            let weights = dual_gate_weights(&w_local, w_global)?;
            for i in 0..rows {
                let (wb, wg) = weights.pair(i);
                for at in i * cols..(i + 1) * cols {
                    out[at] = wb * b[at] as f64 + wg * g[at] as f64;
                }
            }
            (diff, w_local, weights)
        }
        Granularity::Block(k) => {
            let blocks = block_partition(rows, cols, k);
            let diff = block_diff(base, graft, &blocks);
            let w_local = local_gate(&diff, &cfg.gate_net)?;
            let weights = dual_gate_weights(&w_local, w_global)?;
            for (unit, blk) in blocks.iter().enumerate() {
                let (wb, wg) = weights.pair(unit);
                for r in blk.rows.0..blk.rows.1 {
                    for c in blk.cols.0..blk.cols.1 {
                        let at = r * cols + c;
                        out[at] = wb * b[at] as f64 + wg * g[at] as f64;
                    }
                }
            }
            (diff, w_local, weights)
        }
    };

    Ok(MatrixFusion {
        fused: Matrix::from_f64(rows, cols, &out)?,
        h_base,
        h_graft,
        w_global,
        diff,
        w_local,
        weights,
    })
}

/// `W_f = w_b ⊙ W_b + w_g ⊙ W_g` with weights broadcast over each fusion unit.
pub fn fuse_matrix(base: &Matrix, graft: &Matrix, cfg: &GateConfig) -> Result<Matrix> {
    fuse_matrix_detailed(base, graft, cfg).map(|f| f.fused)
}

/// [`fuse_matrix`] with `k × k` block granularity regardless of
/// `cfg.granularity`.
pub fn fuse_matrix_blockwise(
    base: &Matrix,
    graft: &Matrix,
    cfg: &GateConfig,
    k: usize,
) -> Result<Matrix> {
    let cfg = GateConfig {
        granularity: Granularity::Block(k),
        ..*cfg
    };
    fuse_matrix(base, graft, &cfg)
}

/// Per-tensor record of a checkpoint fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSummary {
    pub name: String,
    /// `None` when the tensor was copied from base unchanged.
    pub gates: Option<GateSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSummary {
    pub w_global: f64,
    pub mean_w_local: f64,
    pub mean_w_base: f64,
}

impl From<&MatrixFusion> for GateSummary {
    fn from(f: &MatrixFusion) -> Self {
        Self {
            w_global: f.w_global,
            mean_w_local: f.mean_w_local(),
            mean_w_base: f.mean_w_base(),
        }
    }
}

/// Fuses every tensor selected by `cfg.layer_filter` that both checkpoints
/// hold. Unselected tensors and tensors only `base` holds are copied from
/// `base`; the output keeps `base`'s order and metadata.
pub fn fuse_checkpoints(
    base: &Checkpoint,
    graft: &Checkpoint,
    cfg: &GateConfig,
) -> Result<Checkpoint> {
    fuse_checkpoints_with_summary(base, graft, cfg).map(|(c, _)| c)
}

pub fn fuse_checkpoints_with_summary(
    base: &Checkpoint,
    graft: &Checkpoint,
    cfg: &GateConfig,
) -> Result<(Checkpoint, Vec<TensorSummary>)> {
    cfg.validate()?;
    let mut out = base.clone();
    let mut summary = Vec::with_capacity(base.len());
    for entry in base.entries() {
        let other = match graft.get(&entry.name) {
            Some(other) if cfg.layer_filter.selects(entry.role) => other,
            _ => {
                summary.push(TensorSummary {
                    name: entry.name.clone(),
                    gates: None,
                });
                continue;
            }
        };
        if other.matrix.shape() != entry.matrix.shape() {
            return Err(Error::Shape(format!(
                "tensor `{}`: {:?} vs {:?}",
                entry.name,
                entry.matrix.shape(),
                other.matrix.shape()
            )));
        }
        let fusion = fuse_matrix_detailed(&entry.matrix, &other.matrix, cfg)?;
        summary.push(TensorSummary {
            name: entry.name.clone(),
            gates: Some(GateSummary::from(&fusion)),
        });
        out.replace_matrix(&entry.name, fusion.fused);
    }
    Ok((out, summary))
}

/// Fuses LoRA adapters factor by factor: the A matrices of each adapter are
/// fused together, and so are the B matrices. Non-adapter tensors come from
/// `base`. The layer filter does not apply in this mode.
pub fn fuse_lora(base: &Checkpoint, graft: &Checkpoint, cfg: &GateConfig) -> Result<Checkpoint> {
    fuse_lora_with_summary(base, graft, cfg).map(|(c, _)| c)
}

pub fn fuse_lora_with_summary(
    base: &Checkpoint,
    graft: &Checkpoint,
    cfg: &GateConfig,
) -> Result<(Checkpoint, Vec<TensorSummary>)> {
    cfg.validate()?;
    let base_pairs = base.adapters()?;
    let graft_pairs = graft.adapters()?;
    if let Some(name) = graft_pairs.keys().find(|k| !base_pairs.contains_key(*k)) {
        return Err(Error::Pairing(name.clone()));
    }

    let mut out = base.clone();
    let mut fused_names = alloc::collections::BTreeMap::new();
    for (adapter, pair) in &base_pairs {
        let other = graft_pairs
            .get(adapter)
            .ok_or_else(|| Error::Pairing(adapter.clone()))?;
        for (mine, theirs) in [(&pair.a, &other.a), (&pair.b, &other.b)] {
            let bm = &base.get(mine).expect("adapter tensor exists").matrix;
            let gm = &graft.get(theirs).expect("adapter tensor exists").matrix;
            if bm.shape() != gm.shape() {
                return Err(Error::Shape(format!(
                    "adapter tensor `{mine}`: {:?} vs {:?}",
                    bm.shape(),
                    gm.shape()
                )));
            }
            let fusion = fuse_matrix_detailed(bm, gm, cfg)?;
            fused_names.insert(mine.clone(), GateSummary::from(&fusion));
            out.replace_matrix(mine, fusion.fused);
        }
    }
    let summary = base
        .names()
        .map(|n| TensorSummary {
            name: n.to_string(),
            gates: fused_names.get(n).copied(),
        })
        .collect();
    Ok((out, summary))
}

fn fold(
    experts: &[Checkpoint],
    step: impl Fn(&Checkpoint, &Checkpoint) -> Result<Checkpoint>,
) -> Result<Checkpoint> {
    if experts.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "fusing needs at least 2 experts, got {}",
            experts.len()
        )));
    }
    let mut acc = step(&experts[0], &experts[1])?;
    for next in &experts[2..] {
        acc = step(&acc, next)?;
    }
    let order: Vec<String> = experts
        .iter()
        .enumerate()
        .map(|(i, e)| match e.metadata().get("name") {
            Some(name) => name.clone(),
            None => format!("#{i}"),
        })
        .collect();
    acc.set_metadata(FOLD_ORDER_KEY, order.join(","));
    Ok(acc)
}

/// Left fold `fuse(fuse(e1, e2), e3)…` with [`fuse_checkpoints`]. The fold
/// order is recorded under [`FOLD_ORDER_KEY`], using each expert's `name`
/// metadata when present.
pub fn fuse_many(experts: &[Checkpoint], cfg: &GateConfig) -> Result<Checkpoint> {
    fold(experts, |a, b| fuse_checkpoints(a, b, cfg))
}

/// Left fold with [`fuse_lora`].
pub fn fuse_many_lora(experts: &[Checkpoint], cfg: &GateConfig) -> Result<Checkpoint> {
    fold(experts, |a, b| fuse_lora(a, b, cfg))
}
