//! Named parameter storage with gradient buffers and a binary checkpoint
//! format (JSON manifest + little-endian f64 payload, bit-exact round trip).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{Tape, ValueId};
use super::tensor::Mat;
use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 8] = b"ULCKPT01";

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamEntry {
    /// View the entry as a matrix: `[n]` becomes 1×n, `[r, c]` becomes r×c.
    pub fn as_mat(&self) -> Mat {
        let (r, c) = self.mat_shape();
        Mat::from_vec(r, c, self.data.clone()).expect("entry shape consistent")
    }

    pub fn mat_shape(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("unsupported parameter rank {}", self.shape.len()),
        }
    }

    /// Weight matrices are prunable; rank-1 entries (biases) are not.
    pub fn is_prunable(&self) -> bool {
        self.shape.len() >= 2
    }
}

/// Flat named parameter arrays in insertion order, each with a gradient
/// buffer of identical shape.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter name '{name}'")));
        }
        let size: usize = shape.iter().product();
        if size != data.len() {
            return Err(Error::Shape(format!(
                "parameter '{name}': shape {:?} needs {size} values, got {}",
                shape,
                data.len()
            )));
        }
        let grad = vec![0.0; size];
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push(ParamEntry { name: name.to_string(), shape, data, grad });
        Ok(())
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        let i = self.index[name];
        &self.entries[i]
    }

    pub fn entry_mut(&mut self, name: &str) -> &mut ParamEntry {
        let i = self.index[name];
        &mut self.entries[i]
    }

    pub fn num_entries(&self) -> usize {
        self.entries.len()
    }

    /// Total parameter count (sum of entry sizes).
    pub fn total_len(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    /// Flattened parameter values, entry order then row-major within entry.
    pub fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for e in &self.entries {
            out.extend_from_slice(&e.data);
        }
        out
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_len());
        for e in &self.entries {
            out.extend_from_slice(&e.grad);
        }
        out
    }

    pub fn set_flat_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::Shape(format!(
                "flat vector length {} != parameter count {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let len = e.data.len();
            e.data.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    pub fn set_flat_grads(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.total_len() {
            return Err(Error::Shape("gradient vector length mismatch".into()));
        }
        let mut off = 0;
        for e in &mut self.entries {
            let len = e.grad.len();
            e.grad.copy_from_slice(&flat[off..off + len]);
            off += len;
        }
        Ok(())
    }

    /// FNV-1a over the raw bit patterns; equal iff values are bit-identical.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for e in &self.entries {
            for &v in &e.data {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    pub fn bits_equal(&self, other: &ParamStore) -> bool {
        self.entries.len() == other.entries.len()
            && self.entries.iter().zip(&other.entries).all(|(a, b)| {
                a.name == b.name
                    && a.shape == b.shape
                    && a.data.len() == b.data.len()
                    && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Record every entry as a tape leaf; gradients harvested after backward.
    pub fn bind(&self, tape: &mut Tape) -> ParamBinding {
        let mut ids = HashMap::new();
        let mut order = Vec::new();
        for e in &self.entries {
            let id = tape.leaf(e.as_mat());
            ids.insert(e.name.clone(), id);
            order.push((e.name.clone(), id));
        }
        ParamBinding { ids, order }
    }
}

/// Map from parameter names to their leaves on a specific tape.
pub struct ParamBinding {
    ids: HashMap<String, ValueId>,
    order: Vec<(String, ValueId)>,
}

impl ParamBinding {
    pub fn id(&self, name: &str) -> ValueId {
        *self.ids.get(name).unwrap_or_else(|| panic!("unbound parameter '{name}'"))
    }

    /// Add tape gradients into the store's gradient buffers.
    pub fn harvest(&self, tape: &Tape, store: &mut ParamStore) {
        for (name, id) in &self.order {
            if let Some(g) = tape.grad(*id) {
                let entry = store.entry_mut(name);
                for (dst, src) in entry.grad.iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
        }
    }
}

/// Glorot-uniform init for a dense weight of the given fan-in/fan-out.
pub fn glorot_uniform(fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-bound..bound)).collect()
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    entries: Vec<ManifestEntry>,
}

/// Write a checkpoint: magic, manifest length, JSON manifest, then all entry
/// values as little-endian f64 in manifest order.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    let manifest = Manifest {
        dtype: "f64".to_string(),
        entries: store
            .entries()
            .iter()
            .map(|e| ManifestEntry { name: e.name.clone(), shape: e.shape.clone() })
            .collect(),
    };
    let manifest_bytes =
        serde_json::to_vec(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(CHECKPOINT_MAGIC)?;
    f.write_all(&(manifest_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&manifest_bytes)?;
    for e in store.entries() {
        for &v in &e.data {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let mut f = std::fs::File::open(path)?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Parse { row: 0, msg: "bad checkpoint magic".into() });
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes)?;
    let manifest_len = u64::from_le_bytes(len_bytes) as usize;
    let mut manifest_bytes = vec![0u8; manifest_len];
    f.read_exact(&mut manifest_bytes)?;
    let manifest: Manifest = serde_json::from_slice(&manifest_bytes)
        .map_err(|e| Error::Parse { row: 0, msg: format!("manifest: {e}") })?;
    if manifest.dtype != "f64" {
        return Err(Error::Parse { row: 0, msg: format!("unsupported dtype '{}'", manifest.dtype) });
    }
    let mut store = ParamStore::new();
    for entry in manifest.entries {
        let size: usize = entry.shape.iter().product();
        let mut buf = vec![0u8; size * 8];
        f.read_exact(&mut buf)?;
        let data: Vec<f64> = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.add(&entry.name, entry.shape, data)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn sample_store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", vec![2, 3], vec![0.1, -0.2, 0.3, 1.5e-300, -4.0, 5.25]).unwrap();
        s.add("b", vec![3], vec![0.0, -0.0, 7.125]).unwrap();
        s
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut s = ParamStore::new();
        s.add("w", vec![1], vec![1.0]).unwrap();
        assert!(matches!(s.add("w", vec![1], vec![2.0]), Err(Error::Config(_))));
    }

    #[test]
    fn total_len_sums_entries() {
        assert_eq!(sample_store().total_len(), 9);
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let store = sample_store();
        save_checkpoint(&store, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(store.bits_equal(&loaded));
        assert_eq!(store.checksum(), loaded.checksum());
    }

    #[test]
    fn flat_roundtrip() {
        let mut store = sample_store();
        let flat = store.flat_values();
        store.set_flat_values(&flat).unwrap();
        assert_eq!(store.flat_values(), flat);
        assert!(store.set_flat_values(&flat[1..]).is_err());
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = seeded(3);
        let w = glorot_uniform(10, 20, &mut rng);
        let bound = (6.0 / 30.0f64).sqrt();
        assert!(w.iter().all(|v| v.abs() < bound));
    }
}
