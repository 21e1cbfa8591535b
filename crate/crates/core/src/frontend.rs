//! Learned waveform frontend: strided convolutional encoder with PReLU,
//! latent masking, and a bias-free linear decoder with overlap-add.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};

pub const ENCODER_BASIS: &str = "encoder.basis";
pub const ENCODER_PRELU: &str = "encoder.prelu";
pub const DECODER_BASIS: &str = "decoder.basis";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrontendConfig {
    /// Number of learned basis functions `N`.
    pub num_basis: usize,
    /// Window length `L` in samples.
    pub win_len: usize,
    pub stride: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self { num_basis: 256, win_len: 20, stride: 10 }
    }
}

impl FrontendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_basis == 0 || self.win_len == 0 || self.stride == 0 {
            return Err(Error::Config("frontend sizes must be positive".into()));
        }
        if self.stride > self.win_len {
            return Err(Error::Config(format!(
                "stride {} exceeds window {}",
                self.stride, self.win_len
            )));
        }
        Ok(())
    }

    /// `floor((len - L) / stride) + 1`.
    pub fn frames_for(&self, len: usize) -> Result<usize> {
        if len < self.win_len {
            return Err(Error::Precondition(format!(
                "input of {len} samples is shorter than one {}-sample window",
                self.win_len
            )));
        }
        Ok((len - self.win_len) / self.stride + 1)
    }

    /// Smallest length `>= len` that frames without leftover samples.
    pub fn aligned_len(&self, len: usize) -> usize {
        let len = len.max(self.win_len);
        self.win_len + (len - self.win_len).div_ceil(self.stride) * self.stride
    }

    /// Waveform length produced by decoding `frames` frames.
    pub fn output_len(&self, frames: usize) -> usize {
        (frames.max(1) - 1) * self.stride + self.win_len
    }

    pub fn init_params(&self, init: &Initializer, store: &mut ParamStore) {
        let (n, l) = (self.num_basis, self.win_len);
        store.insert(ENCODER_BASIS, init.fan_in(ENCODER_BASIS, (l, n), l));
        store.insert(ENCODER_PRELU, Array2::from_elem((1, n), 0.25));
        store.insert(DECODER_BASIS, init.fan_in(DECODER_BASIS, (n, l), n));
    }
}

/// Encoder output: `frames × num_basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRep {
    pub values: Array2<f64>,
    pub sample_rate: u32,
}

impl LatentRep {
    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// One `frames × channels` mask per source, summing to one element-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    masks: Vec<Array2<f64>>,
}

pub const MASK_SUM_TOLERANCE: f64 = 1e-6;

impl MaskSet {
    pub fn new(masks: Vec<Array2<f64>>) -> Result<Self> {
        let Some(first) = masks.first() else {
            return Err(Error::Shape("empty mask set".into()));
        };
        let dim = first.dim();
        if masks.iter().any(|m| m.dim() != dim) {
            return Err(Error::Shape("masks differ in shape".into()));
        }
        if masks.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Precondition("mask value outside [0, 1]".into()));
        }
        let worst = max_sum_deviation(&masks);
        if worst > MASK_SUM_TOLERANCE {
            return Err(Error::Precondition(format!("masks sum to 1 only within {worst:e}")));
        }
        Ok(Self { masks })
    }

    pub fn masks(&self) -> &[Array2<f64>] {
        &self.masks
    }

    pub fn num_sources(&self) -> usize {
        self.masks.len()
    }

    /// Splits softmax output laid out as `[source 0 | source 1 | ...]` columns.
    pub fn from_stacked(stacked: &Array2<f64>, sources: usize) -> Result<Self> {
        let width = stacked.ncols() / sources;
        Self::new(
            (0..sources)
                .map(|s| stacked.slice(ndarray::s![.., s * width..(s + 1) * width]).to_owned())
                .collect(),
        )
    }
}

/// Largest `|Σ_s mask_s - 1|` over all cells.
pub fn max_sum_deviation(masks: &[Array2<f64>]) -> f64 {
    let mut total = Array2::<f64>::zeros(masks[0].raw_dim());
    for m in masks {
        total += m;
    }
    total.iter().map(|v| (v - 1.0).abs()).fold(0.0, f64::max)
}

/// Encodes a `(1, len)` waveform node into `(frames, N)`.
pub fn encode_node(g: &mut Graph, params: &ParamStore, cfg: &FrontendConfig, wave: NodeId) -> Result<NodeId> {
    let frames = g.frame(wave, cfg.win_len, cfg.stride);
    let basis = g.param(params, ENCODER_BASIS)?;
    let proj = g.matmul(frames, basis);
    let slope = g.param(params, ENCODER_PRELU)?;
    Ok(g.prelu(proj, slope))
}

/// Decodes `(frames, N)` into a `(1, (frames-1)*stride + L)` waveform node.
pub fn decode_node(g: &mut Graph, params: &ParamStore, cfg: &FrontendConfig, rep: NodeId) -> Result<NodeId> {
    let basis = g.param(params, DECODER_BASIS)?;
    let chunks = g.matmul(rep, basis);
    Ok(g.overlap_add(chunks, cfg.stride))
}

pub fn encode(w: &Waveform, cfg: &FrontendConfig, params: &ParamStore) -> Result<LatentRep> {
    cfg.validate()?;
    cfg.frames_for(w.len())?;
    let mut g = Graph::new();
    let x = g.constant(Array2::from_shape_vec((1, w.len()), w.samples().to_vec()).expect("row shape"));
    let y = encode_node(&mut g, params, cfg, x)?;
    Ok(LatentRep { values: g.value(y).clone(), sample_rate: w.sample_rate() })
}

/// `rep ⊙ mask_s` for each source.
pub fn apply_masks(rep: &LatentRep, masks: &MaskSet) -> Result<Vec<LatentRep>> {
    masks
        .masks()
        .iter()
        .map(|m| {
            if m.dim() != rep.values.dim() {
                return Err(Error::Shape(format!(
                    "mask {:?} does not match representation {:?}",
                    m.dim(),
                    rep.values.dim()
                )));
            }
            Ok(LatentRep { values: &rep.values * m, sample_rate: rep.sample_rate })
        })
        .collect()
}

pub fn decode(rep: &LatentRep, cfg: &FrontendConfig, params: &ParamStore) -> Result<Waveform> {
    if rep.channels() != cfg.num_basis || rep.frames() == 0 {
        return Err(Error::Shape(format!(
            "representation {:?} does not fit {} basis functions",
            rep.values.dim(),
            cfg.num_basis
        )));
    }
    let mut g = Graph::new();
    let r = g.constant(rep.values.clone());
    let y = decode_node(&mut g, params, cfg, r)?;
    Waveform::new(g.row(y), rep.sample_rate)
}
