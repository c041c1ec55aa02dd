//! JSON configuration shared by the command line and the benchmark harness.
//!
//! Every section and key is optional and falls back to the defaults below;
//! unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use graft_core::{
    DareConfig, GateConfig, GatingNet, GlobalPrefactor, Granularity, LayerFilter, TiesConfig,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct CliConfig {
    pub gate: GateSection,
    pub compat: CompatSection,
    pub baseline: BaselineSection,
    pub io: IoSection,
}

impl CliConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.gate.to_gate_config().map(|_| ())?;
        self.baseline.ties()?;
        self.baseline.dare()?;
        if !self.baseline.lambda.is_finite() {
            return Err(Error::Config("baseline.lambda must be finite".into()));
        }
        self.compat.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GranularityName {
    #[default]
    Channel,
    Block,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LayerName {
    #[default]
    All,
    Attn,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PrefactorName {
    #[default]
    Pi,
    C,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GatingSection {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for GatingSection {
    fn default() -> Self {
        let net = GatingNet::default();
        Self {
            alpha: net.alpha,
            beta: net.beta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateSection {
    pub a: f64,
    pub c: f64,
    pub bins: usize,
    pub granularity: GranularityName,
    pub block_size: usize,
    pub layer_filter: LayerName,
    pub gating: GatingSection,
    /// `pi` (default) or `c`: the constant dividing `a` in the global gate.
    pub prefactor: PrefactorName,
    /// Fuse LoRA adapters factor by factor instead of whole tensors.
    pub lora: bool,
}

impl Default for GateSection {
    fn default() -> Self {
        let d = GateConfig::default();
        Self {
            a: d.a,
            c: d.c,
            bins: d.bins,
            granularity: GranularityName::Channel,
            block_size: 8,
            layer_filter: LayerName::All,
            gating: GatingSection::default(),
            prefactor: PrefactorName::Pi,
            lora: false,
        }
    }
}

impl GateSection {
    pub fn to_gate_config(&self) -> Result<GateConfig> {
        let cfg = GateConfig {
            a: self.a,
            c: self.c,
            bins: self.bins,
            granularity: match self.granularity {
                GranularityName::Channel => Granularity::Channel,
                GranularityName::Block => Granularity::Block(self.block_size),
            },
            layer_filter: match self.layer_filter {
                LayerName::All => LayerFilter::All,
                LayerName::Attn => LayerFilter::AttentionOnly,
                LayerName::Mlp => LayerFilter::MlpOnly,
            },
            gate_net: GatingNet::new(self.gating.alpha, self.gating.beta),
            prefactor: match self.prefactor {
                PrefactorName::Pi => GlobalPrefactor::Pi,
                PrefactorName::C => GlobalPrefactor::C,
            },
        };
        if self.block_size == 0 {
            return Err(Error::Config("gate.block_size must be at least 1".into()));
        }
        cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompatSection {
    pub epsilon: f64,
    pub threshold: f64,
    pub enforce: bool,
}

impl Default for CompatSection {
    fn default() -> Self {
        Self {
            epsilon: graft_core::compat::DEFAULT_EPSILON,
            threshold: graft_core::compat::DEFAULT_THRESHOLD,
            enforce: false,
        }
    }
}

impl CompatSection {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config("compat.epsilon must be positive".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("compat.threshold must be finite".into()));
        }
        Ok(())
    }
}

/// Merge baseline selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BaselineMethod {
    #[serde(rename = "average")]
    Average,
    #[default]
    #[serde(rename = "task-arith")]
    TaskArith,
    #[serde(rename = "ties")]
    Ties,
    #[serde(rename = "dare")]
    Dare,
}

impl BaselineMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineMethod::Average => "average",
            BaselineMethod::TaskArith => "task-arith",
            BaselineMethod::Ties => "ties",
            BaselineMethod::Dare => "dare",
        }
    }
}

impl fmt::Display for BaselineMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            BaselineMethod::Average,
            BaselineMethod::TaskArith,
            BaselineMethod::Ties,
            BaselineMethod::Dare,
        ]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| {
            Error::Config(format!(
                "unknown baseline method `{s}` (expected average, task-arith, ties or dare)"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub method: BaselineMethod,
    pub lambda: f64,
    pub trim_fraction: f64,
    pub drop_p: f64,
    pub seed: u64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            method: BaselineMethod::default(),
            lambda: 1.0,
            trim_fraction: TiesConfig::default().trim_fraction,
            drop_p: DareConfig::default().drop_p,
            seed: 0,
        }
    }
}

impl BaselineSection {
    pub fn ties(&self) -> Result<TiesConfig> {
        if !(self.trim_fraction > 0.0 && self.trim_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "baseline.trim_fraction must lie in (0, 1], got {}",
                self.trim_fraction
            )));
        }
        Ok(TiesConfig {
            trim_fraction: self.trim_fraction,
        })
    }

    pub fn dare(&self) -> Result<DareConfig> {
        if !(0.0..1.0).contains(&self.drop_p) {
            return Err(Error::Config(format!(
                "baseline.drop_p must lie in [0, 1), got {}",
                self.drop_p
            )));
        }
        Ok(DareConfig {
            drop_p: self.drop_p,
            seed: self.seed,
        })
    }
}

/// Default paths used when the command line omits them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct IoSection {
    pub inputs: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}
