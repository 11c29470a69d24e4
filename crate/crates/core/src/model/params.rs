//! Named parameter storage and the two fine-tuning freeze regimes.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Training phase selecting a freeze regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Source-only partial fine-tuning: embeddings, positional encodings,
    /// class tokens, layer-norm affines and the classifier train.
    SourceOnly,
    /// Adaptation: the spatial encoder is frozen, the temporal encoder and
    /// classifier train.
    Adaptation,
}

impl Phase {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Phase::SourceOnly),
            2 => Ok(Phase::Adaptation),
            _ => Err(Error::config(format!("phase must be 1 or 2, got {i}"))),
        }
    }
}

/// `name → frozen`
pub type FreezeMask = BTreeMap<String, bool>;

fn is_layer_norm(name: &str) -> bool {
    name.contains(".ln1.") || name.contains(".ln2.") || name.contains(".norm.")
}

/// Whether `name` trains in `phase`. Unknown prefixes (auxiliary heads) are
/// frozen; the projection head is frozen in every phase.
pub fn trainable_in(phase: Phase, name: &str) -> bool {
    if name.starts_with("projection.") {
        return false;
    }
    match phase {
        Phase::SourceOnly => {
            name.ends_with("pos_embed")
                || name.ends_with("cls_token")
                || name.starts_with("spatial.patch_proj.")
                || name.starts_with("classifier.")
                || is_layer_norm(name)
        }
        Phase::Adaptation => name.starts_with("temporal.") || name.starts_with("classifier."),
    }
}

/// Parameters in insertion order, each with a freeze flag.
///
/// `clone` copies the values into fresh leaves, so the copy trains
/// independently of the original.
#[derive(Debug, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
    index: HashMap<String, usize>,
    frozen: Vec<bool>,
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(n, t)| {
                let c = Tensor::from_vec(t.shape(), t.to_vec()).expect("shape already validated");
                c.set_requires_grad(t.requires_grad());
                (n.clone(), c)
            })
            .collect();
        ParamStore {
            entries,
            index: self.index.clone(),
            frozen: self.frozen.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            frozen: Vec::new(),
        }
    }

    /// Adds a trainable leaf. Duplicate names are rejected.
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Tensor<T>> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter {name}")));
        }
        let t = Tensor::param(shape, data)?;
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, t.clone()));
        self.frozen.push(false);
        Ok(t)
    }

    pub fn get(&self, name: &str) -> &Tensor<T> {
        match self.index.get(name) {
            Some(&i) => &self.entries[i].1,
            None => panic!("unknown parameter {name}"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.index.get(name).map(|&i| self.frozen[i]).unwrap_or(true)
    }

    /// Applies a mask: frozen leaves stop tracking gradients.
    pub fn apply_mask(&mut self, mask: &FreezeMask) -> Result<()> {
        for (i, (name, t)) in self.entries.iter().enumerate() {
            let frozen = *mask
                .get(name)
                .ok_or_else(|| Error::config(format!("freeze mask misses parameter {name}")))?;
            self.frozen[i] = frozen;
            t.set_requires_grad(!frozen);
            t.zero_grad();
        }
        Ok(())
    }

    pub fn freeze_all(&mut self) {
        for (i, (_, t)) in self.entries.iter().enumerate() {
            self.frozen[i] = true;
            t.set_requires_grad(false);
            t.zero_grad();
        }
    }

    pub fn unfreeze_all(&mut self) {
        for (i, (_, t)) in self.entries.iter().enumerate() {
            self.frozen[i] = false;
            t.set_requires_grad(true);
        }
    }

    pub fn build_freeze_mask(&self, phase: Phase) -> FreezeMask {
        self.names().map(|n| (n.to_string(), !trainable_in(phase, n))).collect()
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries
            .iter()
            .zip(&self.frozen)
            .filter(|(_, &f)| !f)
            .map(|((n, t), _)| (n.as_str(), t))
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.entries {
            t.zero_grad();
        }
    }

    /// SHA-256 over the little-endian bytes of one parameter.
    pub fn hash_of(&self, name: &str) -> String {
        let mut bytes = Vec::new();
        for &v in self.get(name).data().iter() {
            v.write_le(&mut bytes);
        }
        crate::digest::sha256_hex(&bytes)
    }

    pub fn fingerprint(&self) -> BTreeMap<String, String> {
        self.names().map(|n| (n.to_string(), self.hash_of(n))).collect()
    }

    /// Copies values (not graph state) from another store with identical names
    /// and shapes.
    pub fn copy_values_from(&self, other: &ParamStore<T>) -> Result<()> {
        for (name, t) in &self.entries {
            let src = other
                .try_get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    t.shape(),
                    src.shape()
                )));
            }
            t.set_data(src.to_vec())?;
        }
        Ok(())
    }
}
