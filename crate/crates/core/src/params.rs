//! Named parameter storage and deterministic initialization.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::Tensor;

/// Learnable tensors keyed by module path, e.g. `separator.tcn0.block1.a.conv.weight`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Names whose path starts with `prefix`.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = (&'a String, &'a Tensor)> {
        self.tensors.range(prefix.to_string()..).take_while(move |(k, _)| k.starts_with(prefix))
    }

    /// Copies every tensor under `from` onto the matching path under `to`.
    pub fn copy_prefix(&mut self, from: &str, to: &str) -> Result<()> {
        let copies: Vec<(String, Tensor)> = self
            .with_prefix(from)
            .map(|(k, v)| (format!("{to}{}", &k[from.len()..]), v.clone()))
            .collect();
        for (k, v) in copies {
            let dst = self.get_mut(&k)?;
            if dst.dim() != v.dim() {
                return Err(Error::Shape(format!("cannot tie `{k}`: {:?} vs {:?}", dst.dim(), v.dim())));
            }
            *dst = v;
        }
        Ok(())
    }

    /// Sets every tensor under `prefix` to `value`.
    pub fn fill_prefix(&mut self, prefix: &str, value: f64) {
        for (k, v) in self.tensors.iter_mut() {
            if k.starts_with(prefix) {
                v.fill(value);
            }
        }
    }
}

/// Draws initial parameter values from a named substream of a master seed,
/// so a tensor's initial value depends only on (seed, name).
#[derive(Debug, Clone)]
pub struct Initializer {
    seed: u64,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&self, name: &str) -> ChaCha8Rng {
        substream(self.seed, name)
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(&self, name: &str, shape: (usize, usize), bound: f64) -> Tensor {
        let mut rng = self.rng(name);
        Array2::from_shape_simple_fn(shape, || rng.gen_range(-bound..=bound))
    }

    /// 1x1-conv style weights with fan-in scaling.
    pub fn fan_in(&self, name: &str, shape: (usize, usize), fan_in: usize) -> Tensor {
        self.uniform(name, shape, 1.0 / (fan_in.max(1) as f64).sqrt())
    }
}

/// A deterministic RNG for `(seed, name)`.
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
