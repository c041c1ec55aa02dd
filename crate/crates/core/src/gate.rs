//! Local and global gates and their combination into fusion weights.
//!
//! For a base/graft matrix pair the local gate turns per-channel absolute
//! differences into sigmoid weights, the global gate maps the entropy gap of
//! the two matrices through an arctangent, and [`dual_gate_weights`] merges
//! both into a per-unit `(w_b, w_g)` pair that sums to one.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::checkpoint::TensorRole;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Per-channel affine gating map `d ↦ alpha·d + beta`, followed by a sigmoid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatingNet {
    pub alpha: f64,
    pub beta: f64,
}

impl GatingNet {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    /// `alpha = 0, beta = 0`: every channel gets `w_local = 0.5`.
    pub const fn neutral() -> Self {
        Self::new(0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.alpha.is_finite() || !self.beta.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gating net parameters must be finite (alpha={}, beta={})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

impl Default for GatingNet {
    fn default() -> Self {
        Self::new(1.0, 0.0)
    }
}

/// Unit over which one `(w_b, w_g)` pair is shared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Granularity {
    /// One weight pair per output row.
    #[default]
    Channel,
    /// One weight pair per non-overlapping `k × k` block; edge blocks may be
    /// smaller.
    Block(usize),
}

/// Which tensors of a checkpoint take part in fusion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LayerFilter {
    #[default]
    All,
    AttentionOnly,
    MlpOnly,
}

impl LayerFilter {
    pub fn selects(self, role: TensorRole) -> bool {
        match self {
            LayerFilter::All => true,
            LayerFilter::AttentionOnly => role == TensorRole::Attention,
            LayerFilter::MlpOnly => role == TensorRole::Mlp,
        }
    }
}

/// Scale in front of the arctangent of the global gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GlobalPrefactor {
    /// `a/π`: the gate spans `(1/2 − a/2, 1/2 + a/2)`.
    #[default]
    Pi,
    /// `a/c`: kept for reproduction studies; with large `c` the gate stays
    /// close to 1/2.
    C,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig {
    /// Global gate amplitude, `0 < a ≤ 1`.
    pub a: f64,
    /// Slope applied to the entropy difference, `c > 0`.
    pub c: f64,
    /// Histogram bins for the weight entropy, at least 2.
    pub bins: usize,
    pub granularity: Granularity,
    pub layer_filter: LayerFilter,
    pub gate_net: GatingNet,
    pub prefactor: GlobalPrefactor,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            a: 0.4,
            c: 500.0,
            bins: 10,
            granularity: Granularity::Channel,
            layer_filter: LayerFilter::All,
            gate_net: GatingNet::default(),
            prefactor: GlobalPrefactor::Pi,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "gate amplitude a must lie in (0, 1], got {}",
                self.a
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "entropy slope c must be positive, got {}",
                self.c
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "entropy bins must be at least 2, got {}",
                self.bins
            )));
        }
        if let Granularity::Block(0) = self.granularity {
            return Err(Error::InvalidConfig("block size must be at least 1".into()));
        }
        self.gate_net.validate()
    }

    /// Global gate for the given entropies under this configuration's
    /// prefactor.
    pub fn global_weight(&self, h_base: f64, h_graft: f64) -> f64 {
        let scale = match self.prefactor {
            GlobalPrefactor::Pi => self.a / PI,
            GlobalPrefactor::C => self.a / self.c,
        };
        scale * libm::atan(self.c * (h_base - h_graft)) + 0.5
    }
}

/// Per-unit sums of absolute differences between base and graft.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffVector(pub Vec<f64>);

impl DiffVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `d_i = Σ_j |base[i,j] − graft[i,j]|` for every row `i`.
pub fn channel_diff(base: &Matrix, graft: &Matrix) -> Result<DiffVector> {
    base.ensure_same_shape(graft, "channel_diff")?;
    let d = (0..base.rows())
        .map(|i| {
            base.row(i)
                .iter()
                .zip(graft.row(i))
                .map(|(&b, &g)| libm::fabs(b as f64 - g as f64))
                .sum()
        })
        .collect();
    Ok(DiffVector(d))
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `w_local_i = σ(alpha·d_i + beta)`.
pub fn local_gate(d: &DiffVector, net: &GatingNet) -> Result<Vec<f64>> {
    net.validate()?;
    Ok(d.0
        .iter()
        .map(|&di| sigmoid(net.alpha * di + net.beta))
        .collect())
}

/// `(a/π)·atan(c·(h_base − h_graft)) + 1/2`.
pub fn global_gate(h_base: f64, h_graft: f64, a: f64, c: f64) -> f64 {
    (a / PI) * libm::atan(c * (h_base - h_graft)) + 0.5
}

/// Normalized fusion weights, one `(base, graft)` pair per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    pub base: Vec<f64>,
    pub graft: Vec<f64>,
}

impl FusionWeights {
    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn pair(&self, unit: usize) -> (f64, f64) {
        (self.base[unit], self.graft[unit])
    }
}

/// Combines the local gates with the global gate and softmax-normalizes each
/// unit:
///
/// ```text
/// w̃_b = g·(1 − exp(−g·l))
/// w̃_g = (1−g)·(1 − exp(−(1−g)·(1−l)))
/// (w_b, w_g) = softmax(w̃_b, w̃_g)
/// ```
///
/// Gate values must lie in `[0, 1]`; a saturated sigmoid may return exactly
/// `1.0` in floating point, so the closed interval is accepted.
pub fn dual_gate_weights(w_local: &[f64], w_global: f64) -> Result<FusionWeights> {
    if !(0.0..=1.0).contains(&w_global) {
        return Err(Error::InvalidValue(format!(
            "global gate {w_global} outside [0, 1]"
        )));
    }
    let g = w_global;
    let mut base = Vec::with_capacity(w_local.len());
    let mut graft = Vec::with_capacity(w_local.len());
    for (i, &l) in w_local.iter().enumerate() {
        if !(0.0..=1.0).contains(&l) {
            return Err(Error::InvalidValue(format!(
                "local gate {l} at unit {i} outside [0, 1]"
            )));
        }
        let raw_b = g * (1.0 - libm::exp(-g * l));
        let raw_g = (1.0 - g) * (1.0 - libm::exp(-(1.0 - g) * (1.0 - l)));
        let (wb, wg) = softmax2(raw_b, raw_g);
        base.push(wb);
        graft.push(wg);
    }
    Ok(FusionWeights { base, graft })
}

#[inline]
fn softmax2(x: f64, y: f64) -> (f64, f64) {
    let m = x.max(y);
    let ex = libm::exp(x - m);
    let ey = libm::exp(y - m);
    let z = ex + ey;
    (ex / z, ey / z)
}
