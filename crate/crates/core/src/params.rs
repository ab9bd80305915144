//! Named trainable tensors and the on-disk checkpoint format.
//!
//! A checkpoint is two files: a JSON manifest listing each tensor's name,
//! shape, dtype and byte offset, and a flat little-endian `f32` blob. Tensors
//! are laid out in name order, so saving the same store twice yields
//! identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_BIN: &str = "checkpoint.bin";
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
const FORMAT_VERSION: u32 = 1;
/// Prefix for stored tensors that are state, not trainable weights.
pub const BUFFER_PREFIX: &str = "buf.";

#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T: Scalar = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
    seed: u64,
}

/// Tape handles for every parameter bound into one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.get(name)
            .ok_or_else(|| Error::invalid("bound", format!("parameter {name:?} not bound")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    seed: u64,
    total_bytes: usize,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new(seed: u64) -> Self {
        ParamStore {
            tensors: BTreeMap::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate name {name:?}")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Gaussian-initialised parameter with Xavier-style scale `gain / sqrt(fan_in)`.
    pub fn init_randn<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        gain: f64,
        rng: &mut R,
    ) -> Result<()> {
        let fan_in = shape.first().copied().unwrap_or(1).max(1) as f64;
        self.insert(name, Tensor::randn(shape, gain / fan_in.sqrt(), rng))
    }

    /// Overwrites an existing entry, or inserts it.
    pub fn replace(&mut self, name: &str, t: Tensor<T>) {
        self.tensors.insert(name.to_string(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name)
            .ok_or_else(|| Error::invalid("param_store", format!("missing tensor {name:?}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
            seed: self.seed,
        }
    }

    /// Puts every tensor on the tape. With `trainable` false the leaves are
    /// constants and the backward pass skips them. Names under
    /// [`BUFFER_PREFIX`] are always constants.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if trainable && !k.starts_with(BUFFER_PREFIX) {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Names whose shapes differ from `expected`, plus names missing on
    /// either side.
    pub fn mismatches(&self, expected: &ParamStore<T>) -> Vec<String> {
        let mut bad = Vec::new();
        for (name, t) in expected.iter() {
            match self.get(name) {
                Some(mine) if mine.shape() == t.shape() => {}
                Some(mine) => bad.push(format!("{name} {:?} != {:?}", mine.shape(), t.shape())),
                None => bad.push(format!("{name} missing")),
            }
        }
        for (name, _) in self.iter() {
            if !expected.contains(name) {
                bad.push(format!("{name} unexpected"));
            }
        }
        bad
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.save(&dir.join(CHECKPOINT_BIN), &dir.join(CHECKPOINT_MANIFEST))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join(CHECKPOINT_BIN), &dir.join(CHECKPOINT_MANIFEST))
    }

    pub fn save(&self, bin: &Path, manifest: &Path) -> Result<()> {
        let mut blob = Vec::with_capacity(self.num_scalars() * 4);
        let mut entries = Vec::with_capacity(self.len());
        for (name, t) in self.iter() {
            entries.push(ManifestEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                dtype: "f32".into(),
                offset: blob.len(),
            });
            for v in t.data() {
                blob.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        let m = Manifest {
            format_version: FORMAT_VERSION,
            seed: self.seed,
            total_bytes: blob.len(),
            tensors: entries,
        };
        let json = serde_json::to_string_pretty(&m)
            .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
        fs::write(manifest, json + "\n").map_err(|e| Error::io(manifest, e))?;
        fs::write(bin, &blob).map_err(|e| Error::io(bin, e))?;
        Ok(())
    }

    pub fn load(bin: &Path, manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {}",
                m.format_version
            )));
        }
        let blob = fs::read(bin).map_err(|e| Error::io(bin, e))?;
        let declared: usize = m
            .tensors
            .iter()
            .map(|e| e.shape.iter().product::<usize>() * 4)
            .sum();
        if blob.len() != m.total_bytes || declared != m.total_bytes {
            return Err(Error::Checkpoint(format!(
                "blob is {} bytes, manifest declares {} (tensors need {declared})",
                blob.len(),
                m.total_bytes
            )));
        }
        let mut store = ParamStore::new(m.seed);
        for e in m.tensors {
            if e.dtype != "f32" {
                return Err(Error::Checkpoint(format!("{}: dtype {}", e.name, e.dtype)));
            }
            let n: usize = e.shape.iter().product();
            let end = e.offset + n * 4;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!("{}: range past end of blob", e.name)));
            }
            let data = blob[e.offset..end]
                .chunks_exact(4)
                .map(|b| T::from_f64(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
                .collect();
            store.insert(e.name, Tensor::new(e.shape, data)?)?;
        }
        Ok(store)
    }
}
