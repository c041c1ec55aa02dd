//! Named tensor container shared by every fusion and merge routine.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// What a tensor does in the network it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum TensorRole {
    Attention,
    Mlp,
    LoraA,
    LoraB,
    #[default]
    Other,
}

impl TensorRole {
    pub const ALL: [TensorRole; 5] = [
        TensorRole::Attention,
        TensorRole::Mlp,
        TensorRole::LoraA,
        TensorRole::LoraB,
        TensorRole::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TensorRole::Attention => "attention",
            TensorRole::Mlp => "mlp",
            TensorRole::LoraA => "lora_a",
            TensorRole::LoraB => "lora_b",
            TensorRole::Other => "other",
        }
    }

    pub fn is_adapter(self) -> bool {
        matches!(self, TensorRole::LoraA | TensorRole::LoraB)
    }
}

impl fmt::Display for TensorRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TensorRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TensorRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::InvalidValue(format!("unknown tensor role `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub matrix: Matrix,
    pub role: TensorRole,
}

/// Ordered map from tensor name to `(Matrix, TensorRole)` plus free-form
/// string metadata.
///
/// Insertion order is preserved and names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    entries: Vec<Entry>,
    index: BTreeMap<String, usize>,
    metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor. Fails if the name is already taken.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        matrix: Matrix,
        role: TensorRole,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::InvalidValue(format!(
                "duplicate tensor name `{name}`"
            )));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(Entry { name, matrix, role });
        Ok(())
    }

    pub fn with(mut self, name: &str, matrix: Matrix, role: TensorRole) -> Result<Self> {
        self.insert(name, matrix, role)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.get(name).map(|e| &e.matrix)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, String> {
        &mut self.metadata
    }

    pub fn set_metadata(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    /// Replaces the matrix stored under `name`, keeping its position and role.
    pub(crate) fn replace_matrix(&mut self, name: &str, matrix: Matrix) {
        if let Some(&i) = self.index.get(name) {
            self.entries[i].matrix = matrix;
        }
    }

    /// Same names, roles, shapes and bitwise data, in the same order.
    /// Metadata is ignored.
    pub fn tensors_bit_eq(&self, other: &Checkpoint) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.name == b.name && a.role == b.role && a.matrix.bit_eq(&b.matrix))
    }

    /// Groups adapter tensors by adapter name.
    ///
    /// The adapter name of a `LoraA`/`LoraB` tensor is its name with the
    /// final `.`-separated segment removed (`layer0.q.A` belongs to
    /// `layer0.q`). Each adapter must have exactly one A and one B tensor and
    /// the inner (rank) dimensions must agree: `A` is `r × N`, `B` is `M × r`.
    pub fn adapters(&self) -> Result<BTreeMap<String, AdapterPair>> {
        let mut found: BTreeMap<String, (Option<String>, Option<String>)> = BTreeMap::new();
        for e in self.entries.iter().filter(|e| e.role.is_adapter()) {
            let adapter = adapter_name(&e.name).to_string();
            let slot = found.entry(adapter.clone()).or_default();
            let side = if e.role == TensorRole::LoraA {
                &mut slot.0
            } else {
                &mut slot.1
            };
            if side.is_some() {
                return Err(Error::Pairing(adapter));
            }
            *side = Some(e.name.clone());
        }
        let mut out = BTreeMap::new();
        for (adapter, (a, b)) in found {
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::Pairing(adapter));
            };
            let rank_a = self.matrix(&a).map(Matrix::rows);
            let rank_b = self.matrix(&b).map(Matrix::cols);
            if rank_a != rank_b {
                return Err(Error::Pairing(adapter));
            }
            out.insert(adapter, AdapterPair { a, b });
        }
        Ok(out)
    }
}

/// Tensor names of one LoRA adapter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterPair {
    pub a: String,
    pub b: String,
}

pub(crate) fn adapter_name(tensor: &str) -> &str {
    match tensor.rfind('.') {
        Some(pos) => &tensor[..pos],
        None => tensor,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShapeMismatch {
    pub name: String,
    pub a: (usize, usize),
    pub b: (usize, usize),
}

/// Outcome of [`validate_pair`]: every tensor name of either side appears in
/// exactly one list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairReport {
    pub fusable: Vec<String>,
    pub mismatched: Vec<ShapeMismatch>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

impl PairReport {
    pub fn all_fusable(&self) -> bool {
        self.mismatched.is_empty() && self.only_a.is_empty() && self.only_b.is_empty()
    }
}

/// Compares two checkpoints by tensor name and shape.
pub fn validate_pair(a: &Checkpoint, b: &Checkpoint) -> PairReport {
    let mut report = PairReport::default();
    for e in a.entries() {
        match b.matrix(&e.name) {
            Some(other) if other.shape() == e.matrix.shape() => report.fusable.push(e.name.clone()),
            Some(other) => report.mismatched.push(ShapeMismatch {
                name: e.name.clone(),
                a: e.matrix.shape(),
                b: other.shape(),
            }),
            None => report.only_a.push(e.name.clone()),
        }
    }
    report.only_b = b
        .names()
        .filter(|n| !a.contains(n))
        .map(String::from)
        .collect();
    report
}
