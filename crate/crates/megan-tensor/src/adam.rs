//! Named parameter storage and the Adam optimizer.
//!
//! A [`ParamStore`] maps stable string names to parameter tensors plus
//! their Adam moment estimates, and serializes the whole state to a
//! versioned little-endian binary image. Loading the image back yields a
//! bit-identical store, which is what makes training resumption exactly
//! reproducible.

use std::collections::BTreeMap;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::tensor::{shape_err, Tensor, TensorError};

/// Adam hyperparameters. The learning rate is passed per step instead
/// because schedules change it constantly; these three almost never move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ParamEntry {
    value: Tensor,
    m: Tensor,
    v: Tensor,
}

/// All trainable parameters with their optimizer state.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
    /// Number of Adam steps taken so far (the bias-correction clock).
    steps: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    /// Register a parameter; moments start at zero. Replaces any previous
    /// parameter of the same name wholesale.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let m = Tensor::zeros(value.rows(), value.cols());
        let v = Tensor::zeros(value.rows(), value.cols());
        self.entries.insert(name.to_string(), ParamEntry { value, m, v });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|e| &e.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|e| &mut e.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), &e.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters across all tensors.
    pub fn total_params(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub fn adam_steps(&self) -> u64 {
        self.steps
    }

    /// One Adam update over every parameter, in name order, with default
    /// betas and epsilon. Parameters missing from `grads` are treated as
    /// having zero gradient (their moments still decay); gradients for
    /// unknown names are rejected, as are shape mismatches.
    pub fn adam_step(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
    ) -> Result<(), TensorError> {
        self.adam_step_with(grads, lr, AdamHyper::default())
    }

    pub fn adam_step_with(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        hyper: AdamHyper,
    ) -> Result<(), TensorError> {
        for (name, grad) in grads {
            match self.entries.get(name) {
                None => {
                    return Err(TensorError::InvalidArgument {
                        op: "adam_step",
                        message: format!("gradient for unknown parameter {name:?}"),
                    })
                }
                Some(e) if !e.value.same_shape(grad) => {
                    return Err(shape_err("adam_step", &e.value, grad));
                }
                Some(_) => {}
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bias1 = 1.0 - hyper.beta1.powi(t);
        let bias2 = 1.0 - hyper.beta2.powi(t);
        let zero = Tensor::zeros(0, 0);
        for (name, entry) in self.entries.iter_mut() {
            let grad = grads.get(name).unwrap_or(&zero);
            let n = entry.value.len();
            for i in 0..n {
                let g = if grad.len() == n { grad.data()[i] } else { 0.0 };
                let m = hyper.beta1 * entry.m.data()[i] + (1.0 - hyper.beta1) * g;
                let v = hyper.beta2 * entry.v.data()[i] + (1.0 - hyper.beta2) * g * g;
                entry.m.data_mut()[i] = m;
                entry.v.data_mut()[i] = v;
                let m_hat = m / bias1;
                let v_hat = v / bias2;
                entry.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
            }
        }
        Ok(())
    }

    // -- serialization --------------------------------------------------

    const MAGIC: &'static [u8; 4] = b"MGPS";
    const VERSION: u32 = 1;

    /// Serialize to the versioned little-endian binary image.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&self.steps.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(entry.value.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(entry.value.cols() as u64).to_le_bytes());
            for t in [&entry.value, &entry.m, &entry.v] {
                for v in t.data() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    /// Parse an image produced by [`ParamStore::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<ParamStore, StoreError> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != Self::MAGIC {
            return Err(StoreError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != Self::VERSION {
            return Err(StoreError::Format(format!("unsupported version {version}")));
        }
        let steps = r.u64()?;
        let count = r.u64()? as usize;
        let mut entries = BTreeMap::new();
        for _ in 0..count {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| StoreError::Format("parameter name is not UTF-8".into()))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let mut tensors = Vec::with_capacity(3);
            for _ in 0..3 {
                let mut data = Vec::with_capacity(rows * cols);
                for _ in 0..rows * cols {
                    data.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
                }
                tensors.push(
                    Tensor::from_vec(rows, cols, data)
                        .map_err(|e| StoreError::Format(e.to_string()))?,
                );
            }
            let v = tensors.pop().expect("three tensors");
            let m = tensors.pop().expect("three tensors");
            let value = tensors.pop().expect("three tensors");
            if entries.insert(name.clone(), ParamEntry { value, m, v }).is_some() {
                return Err(StoreError::Format(format!("duplicate parameter {name:?}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(StoreError::Format(format!(
                "{} trailing bytes after the last parameter",
                bytes.len() - r.pos
            )));
        }
        Ok(ParamStore { entries, steps })
    }

    pub fn save_to(&self, path: &Path) -> io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()
    }

    pub fn load_from(path: &Path) -> Result<ParamStore, StoreError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        ParamStore::from_bytes(&bytes)
    }
}

/// Failures while reading a serialized parameter store.
#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("malformed parameter store: {0}")]
    Format(String),
    #[error("i/o error reading parameter store")]
    Io(#[from] io::Error),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        if self.pos + n > self.bytes.len() {
            return Err(StoreError::Format("truncated input".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(name: &str, t: Tensor) -> BTreeMap<String, Tensor> {
        let mut g = BTreeMap::new();
        g.insert(name.to_string(), t);
        g
    }

    #[test]
    fn zero_gradient_leaves_fresh_parameters_unchanged() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(2, 2, 0.5));
        store.adam_step(&grads_of("w", Tensor::zeros(2, 2)), 1e-2).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[0.5; 4]);
        // Missing gradients behave the same as explicit zeros.
        store.adam_step(&BTreeMap::new(), 1e-2).unwrap();
        assert_eq!(store.get("w").unwrap().data(), &[0.5; 4]);
    }

    #[test]
    fn first_step_moves_by_exactly_the_learning_rate() {
        // With bias correction, the first update for any nonzero constant
        // gradient has magnitude lr / (1 + eps/sqrt(v_hat)) ≈ lr.
        let mut store = ParamStore::new();
        store.insert("w", Tensor::scalar(1.0));
        store.adam_step(&grads_of("w", Tensor::scalar(1.0)), 0.01).unwrap();
        let moved = 1.0 - store.get("w").unwrap().item();
        assert!((moved - 0.01).abs() < 1e-9, "moved {moved}");
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(x, y) = (x - 3)^2 + 10 * (y + 1)^2, minimum at (3, -1).
        let mut store = ParamStore::new();
        store.insert("p", Tensor::from_vec(1, 2, vec![0.0, 0.0]).unwrap());
        for _ in 0..5000 {
            let p = store.get("p").unwrap();
            let (x, y) = (p.at(0, 0), p.at(0, 1));
            let g = Tensor::from_vec(1, 2, vec![2.0 * (x - 3.0), 20.0 * (y + 1.0)]).unwrap();
            store.adam_step(&grads_of("p", g), 1e-2).unwrap();
        }
        let p = store.get("p").unwrap();
        assert!((p.at(0, 0) - 3.0).abs() < 1e-3, "x = {}", p.at(0, 0));
        assert!((p.at(0, 1) + 1.0).abs() < 1e-3, "y = {}", p.at(0, 1));
    }

    #[test]
    fn bad_gradients_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(2, 2));
        let err = store.adam_step(&grads_of("nope", Tensor::zeros(2, 2)), 1e-3).unwrap_err();
        assert!(err.to_string().contains("nope"));
        let err = store.adam_step(&grads_of("w", Tensor::zeros(1, 4)), 1e-3).unwrap_err();
        assert!(matches!(err, TensorError::ShapeMismatch { op: "adam_step", .. }));
        // Failed steps must not advance the clock.
        assert_eq!(store.adam_steps(), 0);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("layer.weight", Tensor::from_vec(2, 3, vec![0.1, -0.2, 1e-17, 3.5, f64::MIN_POSITIVE, -0.0]).unwrap());
        store.insert("layer.bias", Tensor::from_vec(1, 3, vec![0.25, -1.5, 2.0]).unwrap());
        // Take a couple of steps so moments and the clock are nontrivial.
        for _ in 0..3 {
            store
                .adam_step(&grads_of("layer.weight", Tensor::filled(2, 3, 0.3)), 1e-3)
                .unwrap();
        }
        let bytes = store.to_bytes();
        let back = ParamStore::from_bytes(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.adam_steps(), 3);
    }

    #[test]
    fn malformed_images_are_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::zeros(1, 1));
        let bytes = store.to_bytes();
        assert!(ParamStore::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut wrong_magic = bytes.clone();
        wrong_magic[0] = b'X';
        assert!(ParamStore::from_bytes(&wrong_magic).is_err());
        let mut trailing = bytes;
        trailing.push(0);
        assert!(ParamStore::from_bytes(&trailing).is_err());
    }

    #[test]
    fn total_params_counts_scalars() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::zeros(10, 20));
        store.insert("b", Tensor::zeros(1, 5));
        assert_eq!(store.total_params(), 205);
    }
}
