//! Activation-based compatibility scoring.
//!
//! Per module, the mean magnitude `μ`, sparsity `s` and variance `v` of its
//! recorded activations give a sensitivity `ρ = μ·(1−s)·√v`. Each statistic
//! is then min-max normalized across modules, the sensitivity is recomputed
//! from the normalized values, and the compatibility score is the mean of the
//! normalized sensitivities.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const DEFAULT_THRESHOLD: f64 = 0.25;

/// Activations of each traced module over `K` input samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    modules: Vec<(String, Vec<Matrix>)>,
    epsilon: f64,
}

impl ActivationTrace {
    /// Checks that every module has the same number `K ≥ 1` of samples and
    /// that samples of one module share their column count.
    pub fn new(modules: Vec<(String, Vec<Matrix>)>, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidTrace(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        let k = modules.first().map(|(_, s)| s.len()).unwrap_or(0);
        for (name, samples) in &modules {
            if samples.is_empty() {
                return Err(Error::InvalidTrace(format!(
                    "module `{name}` has no samples"
                )));
            }
            if samples.len() != k {
                return Err(Error::InvalidTrace(format!(
                    "module `{name}` has {} samples, expected {k}",
                    samples.len()
                )));
            }
            let d = samples[0].cols();
            if samples.iter().any(|m| m.cols() != d) {
                return Err(Error::InvalidTrace(format!(
                    "module `{name}` mixes activation widths"
                )));
            }
        }
        for (i, (name, _)) in modules.iter().enumerate() {
            if modules[..i].iter().any(|(n, _)| n == name) {
                return Err(Error::InvalidTrace(format!("duplicate module `{name}`")));
            }
        }
        Ok(Self { modules, epsilon })
    }

    pub fn modules(&self) -> &[(String, Vec<Matrix>)] {
        &self.modules
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Result<Self> {
        let modules = core::mem::take(&mut self.modules);
        Self::new(modules, epsilon)
    }

    /// Number of samples per module (zero for an empty trace).
    pub fn samples(&self) -> usize {
        self.modules.first().map(|(_, s)| s.len()).unwrap_or(0)
    }
}

/// Raw activation statistics of one module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModuleStats {
    pub mu: f64,
    pub s: f64,
    pub v: f64,
    pub rho: f64,
}

/// Min-max normalized statistics of one module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedStats {
    pub mu: f64,
    pub s: f64,
    pub v: f64,
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Fusable,
    NotRecommended,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Fusable => "Fusable",
            Verdict::NotRecommended => "NotRecommended",
        }
    }
}

#[inline]
fn sensitivity(mu: f64, s: f64, v: f64) -> f64 {
    mu * (1.0 - s) * libm::sqrt(v)
}

/// Statistics over `K` activation matrices: mean absolute value, fraction of
/// entries with `|a| < epsilon`, and population variance, each averaged over
/// the samples.
pub fn module_stats(acts: &[Matrix], epsilon: f64) -> Result<ModuleStats> {
    if acts.is_empty() {
        return Err(Error::InvalidTrace("no activation samples".into()));
    }
    let (mut mu, mut s, mut v) = (0.0, 0.0, 0.0);
    for a in acts {
        let data = a.data();
        let n = data.len() as f64;
        let mut abs_sum = 0.0;
        let mut small = 0usize;
        let mut sum = 0.0;
        for &x in data {
            let x = x as f64;
            abs_sum += libm::fabs(x);
            sum += x;
            if libm::fabs(x) < epsilon {
                small += 1;
            }
        }
        let mean = sum / n;
        let var = data
            .iter()
            .map(|&x| {
                let d = x as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        mu += abs_sum / n;
        s += small as f64 / n;
        v += var;
    }
    let k = acts.len() as f64;
    let (mu, s, v) = (mu / k, s / k, v / k);
    Ok(ModuleStats {
        mu,
        s,
        v,
        rho: sensitivity(mu, s, v),
    })
}

fn min_max(xs: impl Iterator<Item = f64> + Clone) -> impl Fn(f64) -> f64 {
    let lo = xs.clone().fold(f64::INFINITY, f64::min);
    let hi = xs.fold(f64::NEG_INFINITY, f64::max);
    move |x| {
        if hi > lo {
            ((x - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            0.0
        }
    }
}

/// Min-max normalizes `mu`, `s` and `v` across modules. A statistic that is
/// equal for every module normalizes to zero.
pub fn normalize_across_modules(stats: &[(String, ModuleStats)]) -> Vec<(String, NormalizedStats)> {
    let mu = min_max(stats.iter().map(|(_, m)| m.mu));
    let s = min_max(stats.iter().map(|(_, m)| m.s));
    let v = min_max(stats.iter().map(|(_, m)| m.v));
    stats
        .iter()
        .map(|(name, m)| {
            let (mu, s, v) = (mu(m.mu), s(m.s), v(m.v));
            (
                name.clone(),
                NormalizedStats {
                    mu,
                    s,
                    v,
                    rho: sensitivity(mu, s, v),
                },
            )
        })
        .collect()
}

/// Mean normalized sensitivity. Zero for an empty list.
pub fn compatibility_score(normalized: &[(String, NormalizedStats)]) -> f64 {
    if normalized.is_empty() {
        return 0.0;
    }
    normalized.iter().map(|(_, n)| n.rho).sum::<f64>() / normalized.len() as f64
}

/// `Fusable` iff `score > threshold`.
pub fn threshold_verdict(score: f64, threshold: f64) -> Verdict {
    if score > threshold {
        Verdict::Fusable
    } else {
        Verdict::NotRecommended
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleReport {
    pub name: String,
    pub raw: ModuleStats,
    pub normalized: NormalizedStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub modules: Vec<ModuleReport>,
    pub score: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

/// Runs the whole pipeline on a trace.
pub fn analyze(trace: &ActivationTrace, threshold: f64) -> Result<CompatibilityReport> {
    if trace.modules().is_empty() {
        return Err(Error::InvalidTrace("trace has no modules".into()));
    }
    let raw = trace
        .modules()
        .iter()
        .map(|(name, acts)| Ok((name.clone(), module_stats(acts, trace.epsilon())?)))
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_across_modules(&raw);
    let score = compatibility_score(&normalized);
    let modules = raw
        .into_iter()
        .zip(normalized)
        .map(|((name, raw), (_, normalized))| ModuleReport {
            name,
            raw,
            normalized,
        })
        .collect();
    Ok(CompatibilityReport {
        modules,
        score,
        threshold,
        verdict: threshold_verdict(score, threshold),
    })
}
