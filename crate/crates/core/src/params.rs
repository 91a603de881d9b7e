//! Named parameter collections and their on-disk checkpoint format.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An ordered set of uniquely named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    slots: Vec<(String, Tensor)>,
}

impl ParamVector {
    pub fn new(slots: Vec<(String, Tensor)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, _) in &slots {
            if !seen.insert(name.as_str()) {
                return Err(Error::Invalid(format!("duplicate parameter slot `{name}`")));
            }
        }
        Ok(Self { slots })
    }

    pub fn slots(&self) -> &[(String, Tensor)] {
        &self.slots
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slots.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    /// Total scalar count across all slots.
    pub fn total_len(&self) -> usize {
        self.slots.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for (_, t) in &self.slots {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Rebuilds a vector with this one's slot layout from flat values.
    pub fn unflatten(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_len() {
            return Err(Error::shape(
                "unflatten",
                format!("expected {} values, got {}", self.total_len(), flat.len()),
            ));
        }
        let mut offset = 0;
        let mut slots = Vec::with_capacity(self.slots.len());
        for (name, t) in &self.slots {
            let n = t.len();
            slots.push((
                name.clone(),
                Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec())?,
            ));
            offset += n;
        }
        Ok(Self { slots })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .map(|(n, t)| (n.clone(), Tensor::zeros(t.shape())))
                .collect(),
        }
    }

    fn check_layout(&self, other: &Self, op: &'static str) -> Result<()> {
        let same = self.slots.len() == other.slots.len()
            && self
                .slots
                .iter()
                .zip(&other.slots)
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape());
        if same {
            Ok(())
        } else {
            Err(Error::shape(op, "parameter layouts differ"))
        }
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &Self) -> Result<Self> {
        self.check_layout(other, "axpy")?;
        let slots = self
            .slots
            .iter()
            .zip(&other.slots)
            .map(|((n, a), (_, b))| {
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + alpha * y).collect();
                (n.clone(), Tensor::new(a.shape().to_vec(), data).expect("same shape"))
            })
            .collect();
        Ok(Self { slots })
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .map(|(n, t)| (n.clone(), t.map(|v| alpha * v)))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.check_layout(other, "dot")?;
        Ok(self.flatten().iter().zip(other.flatten()).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.slots
            .iter()
            .flat_map(|(_, t)| t.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|(_, t)| t.all_finite())
    }

    /// Keeps only slots whose name starts with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> Self {
        Self {
            slots: self
                .slots
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .cloned()
                .collect(),
        }
    }

    /// Concatenates two vectors with disjoint slot names.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        let mut slots = self.slots.clone();
        slots.extend(other.slots.iter().cloned());
        Self::new(slots)
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        f64s_to_le_bytes(&self.flatten())
    }
}

pub(crate) fn f64s_to_le_bytes(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn f64s_from_le_bytes(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() % 8 != 0 {
        return Err(Error::Format(format!(
            "binary payload length {} is not a multiple of 8",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// JSON manifest describing a flat parameter binary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub total_len: usize,
    pub slots: Vec<SlotEntry>,
    /// Free-form metadata owned by the producer (model config, etc.).
    #[serde(default)]
    pub meta: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

pub const CHECKPOINT_FORMAT: &str = "faultdg.params/1";

impl CheckpointManifest {
    pub fn describe(params: &ParamVector, meta: serde_json::Value) -> Self {
        let mut offset = 0;
        let slots = params
            .slots()
            .iter()
            .map(|(name, t)| {
                let e = SlotEntry {
                    name: name.clone(),
                    shape: t.shape().to_vec(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            total_len: offset,
            slots,
            meta,
        }
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let m: Self = serde_json::from_slice(bytes)?;
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format `{}`", self.format)));
        }
        let mut offset = 0usize;
        for s in &self.slots {
            if s.offset != offset {
                return Err(Error::Format(format!(
                    "slot `{}` offset {} (expected {offset})",
                    s.name, s.offset
                )));
            }
            let n = s
                .shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Format(format!("slot `{}` shape overflows", s.name)))?;
            offset = offset
                .checked_add(n)
                .ok_or_else(|| Error::Format("slot sizes overflow".into()))?;
        }
        if offset != self.total_len {
            return Err(Error::Format(format!(
                "slots cover {offset} values, manifest says {}",
                self.total_len
            )));
        }
        Ok(())
    }

    /// Rebuilds the parameter vector from the binary payload.
    pub fn decode(&self, payload: &[u8]) -> Result<ParamVector> {
        self.validate()?;
        let values = f64s_from_le_bytes(payload)?;
        if values.len() != self.total_len {
            return Err(Error::Format(format!(
                "binary holds {} values, manifest says {}",
                values.len(),
                self.total_len
            )));
        }
        let mut slots = Vec::with_capacity(self.slots.len());
        for s in &self.slots {
            let n: usize = s.shape.iter().product();
            slots.push((
                s.name.clone(),
                Tensor::new(s.shape.clone(), values[s.offset..s.offset + n].to_vec())?,
            ));
        }
        ParamVector::new(slots)
    }
}

/// Writes `<prefix>.json` and `<prefix>.bin`; returns the two paths.
pub fn save_checkpoint(
    prefix: &Path,
    params: &ParamVector,
    meta: serde_json::Value,
) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    let json_path = prefix.with_extension("json");
    let bin_path = prefix.with_extension("bin");
    let manifest = CheckpointManifest::describe(params, meta);
    let json = serde_json::to_vec_pretty(&manifest)?;
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    fs::write(&bin_path, params.to_le_bytes()).map_err(|e| Error::io(&bin_path, e))?;
    Ok((json_path, bin_path))
}

pub fn load_checkpoint(prefix: &Path) -> Result<(ParamVector, CheckpointManifest)> {
    let json_path = prefix.with_extension("json");
    let bin_path = prefix.with_extension("bin");
    let json = fs::read(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let manifest = CheckpointManifest::from_json_bytes(&json)?;
    let bin = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let params = manifest.decode(&bin)?;
    Ok((params, manifest))
}
