//! Single-file checkpoints: magic, `u64` header length, JSON header, then raw
//! little-endian `f64` tensor blobs in header order.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Tensor;
use crate::params::ParamStore;
use crate::train::config::RunConfig;
use crate::train::optim::OptimizerState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TCNSEPCK";
const FORMAT_VERSION: u32 = 1;
const DTYPE: &str = "f64-le";
const PARAM_PREFIX: &str = "param/";
const OPTIM_PREFIX: &str = "optim/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub config: RunConfig,
    pub params: ParamStore,
    pub optimizer: OptimizerState,
    /// Data-order stream, positioned after the last drawn epoch.
    pub rng: ChaCha8Rng,
    pub data_order: Vec<usize>,
    pub data_cursor: usize,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    key: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: u32,
    dtype: String,
    step: u64,
    config: RunConfig,
    optimizer: OptimizerState,
    rng: ChaCha8Rng,
    data_order: Vec<usize>,
    data_cursor: usize,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    fn tensors(&self) -> BTreeMap<String, &Tensor> {
        let mut out = BTreeMap::new();
        for (k, t) in self.params.iter() {
            out.insert(format!("{PARAM_PREFIX}{k}"), t);
        }
        for (k, t) in &self.optimizer.slots {
            out.insert(format!("{OPTIM_PREFIX}{k}"), t);
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.tensors();
        let header = Header {
            format: FORMAT_VERSION,
            dtype: DTYPE.into(),
            step: self.step,
            config: self.config.clone(),
            optimizer: self.optimizer.clone(),
            rng: self.rng.clone(),
            data_order: self.data_order.clone(),
            data_cursor: self.data_cursor,
            tensors: tensors
                .iter()
                .map(|(k, t)| TensorEntry { key: k.clone(), rows: t.nrows(), cols: t.ncols() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + tensors.values().map(|t| t.len() * 8).sum::<usize>());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in tensors.values() {
            for v in t.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + header_len)
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let header: Header = serde_json::from_slice(body)?;
        if header.format != FORMAT_VERSION || header.dtype != DTYPE {
            return Err(Error::Checkpoint(format!("unsupported format {} / {}", header.format, header.dtype)));
        }
        let mut cursor = 16 + header_len;
        let mut params = ParamStore::new();
        let mut optimizer = header.optimizer;
        for entry in header.tensors {
            let n = entry.rows * entry.cols;
            let raw = bytes
                .get(cursor..cursor + n * 8)
                .ok_or_else(|| Error::Checkpoint(format!("truncated tensor `{}`", entry.key)))?;
            cursor += n * 8;
            let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            let t = Array2::from_shape_vec((entry.rows, entry.cols), values).expect("shape matches length");
            if let Some(name) = entry.key.strip_prefix(PARAM_PREFIX) {
                params.insert(name, t);
            } else if let Some(slot) = entry.key.strip_prefix(OPTIM_PREFIX) {
                optimizer.slots.insert(slot.to_string(), t);
            } else {
                return Err(Error::Checkpoint(format!("unknown tensor key `{}`", entry.key)));
            }
        }
        if cursor != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - cursor)));
        }
        Ok(Self {
            step: header.step,
            config: header.config,
            params,
            optimizer,
            rng: header.rng,
            data_order: header.data_order,
            data_cursor: header.data_cursor,
        })
    }

    /// Writes via a temporary sibling and rename, so readers never see a partial file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("bin.tmp");
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes()?)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::substream;
    use ndarray::array;
    use rand::Rng;

    fn sample() -> Checkpoint {
        let mut params = ParamStore::new();
        params.insert("a.weight", array![[1.0, -2.5e-300], [f64::MIN_POSITIVE, 3.0]]);
        params.insert("b", array![[0.1 + 0.2]]);
        let mut optimizer = OptimizerState { method: "adam".into(), step: 3, slots: BTreeMap::new() };
        optimizer.slots.insert("m/b".into(), array![[1e-9]]);
        let mut rng = substream(5, "data");
        let _: u64 = rng.gen();
        Checkpoint { step: 3, config: RunConfig::default(), params, optimizer, rng, data_order: vec![2, 0, 1], data_cursor: 1 }
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let ck = sample();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(Error::Checkpoint(_))));
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt_3.bin");
        sample().save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), sample());
    }
}
