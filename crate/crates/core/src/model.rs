//! Encoder → separator → per-source decoding, with segment-wise inference.

use ndarray::Array2;

use crate::audio::segment::segment_utterance;
use crate::audio::Waveform;
use crate::error::{Error, Result};
use crate::frontend::{decode_node, encode_node, FrontendConfig};
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};
use crate::separators::{Separator, SeparatorConfig, SeparatorRegistry};

/// Nodes produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// One `(1, len)` estimate per source, trimmed to the input length.
    pub sources: Vec<NodeId>,
    /// Masks of every processed chunk, `frames × (S·N)`.
    pub masks: Vec<NodeId>,
    /// Pyramid branch weights of every processed chunk, if any.
    pub branch_weights: Vec<NodeId>,
}

#[derive(Debug)]
pub struct SeparationModel {
    frontend: FrontendConfig,
    separator: Box<dyn Separator>,
}

impl SeparationModel {
    pub fn new(frontend: FrontendConfig, separator: &SeparatorConfig) -> Result<Self> {
        Self::with_registry(frontend, separator, &SeparatorRegistry::builtin())
    }

    pub fn with_registry(frontend: FrontendConfig, separator: &SeparatorConfig, registry: &SeparatorRegistry) -> Result<Self> {
        frontend.validate()?;
        let separator = registry.build(separator, frontend.num_basis)?;
        Ok(Self { frontend, separator })
    }

    pub fn frontend(&self) -> &FrontendConfig {
        &self.frontend
    }

    pub fn separator(&self) -> &dyn Separator {
        self.separator.as_ref()
    }

    pub fn num_sources(&self) -> usize {
        self.separator.config().num_sources
    }

    pub fn init_params(&self, seed: u64) -> ParamStore {
        let init = Initializer::new(seed);
        let mut store = ParamStore::new();
        self.frontend.init_params(&init, &mut store);
        self.separator.init_params(&init, &mut store);
        store
    }

    /// Separates one chunk. The chunk is zero-padded up to a whole number of
    /// frames and the estimates trimmed back to `samples.len()`.
    pub fn forward_chunk(&self, g: &mut Graph, params: &ParamStore, samples: &[f64]) -> Result<ForwardOutput> {
        if samples.is_empty() {
            return Err(Error::Precondition("cannot separate an empty signal".into()));
        }
        let len = samples.len();
        let mut padded = samples.to_vec();
        padded.resize(self.frontend.aligned_len(len), 0.0);
        let x = g.input(Array2::from_shape_vec((1, padded.len()), padded).expect("row shape"));
        let rep = encode_node(g, params, &self.frontend, x)?;
        let out = self.separator.forward(g, params, rep)?;
        let n = self.frontend.num_basis;
        let mut sources = Vec::with_capacity(self.num_sources());
        for s in 0..self.num_sources() {
            let mask = g.slice_cols(out.masks, s * n, n);
            let masked = g.mul(rep, mask);
            let wave = decode_node(g, params, &self.frontend, masked)?;
            sources.push(g.slice_cols(wave, 0, len));
        }
        Ok(ForwardOutput { sources, masks: vec![out.masks], branch_weights: out.branch_weights.into_iter().collect() })
    }

    /// Full-utterance separation: cut into `seg_len`-sample segments (no
    /// overlap), separate each, and reassemble every source to the input
    /// length. `None` processes the utterance in one piece.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, samples: &[f64], seg_len: Option<usize>) -> Result<ForwardOutput> {
        let seg_len = match seg_len {
            Some(s) if s < samples.len() => s,
            _ => return self.forward_chunk(g, params, samples),
        };
        let (segments, record) = segment_utterance(samples, seg_len, seg_len)?;
        let mut per_source: Vec<Vec<NodeId>> = vec![Vec::with_capacity(segments.len()); self.num_sources()];
        let mut masks = Vec::new();
        let mut branch_weights = Vec::new();
        for seg in &segments {
            let out = self.forward_chunk(g, params, seg)?;
            for (acc, node) in per_source.iter_mut().zip(out.sources) {
                acc.push(node);
            }
            masks.extend(out.masks);
            branch_weights.extend(out.branch_weights);
        }
        let sources = per_source
            .iter()
            .map(|segs| g.overlap_average(segs, record.hop, record.original_len))
            .collect();
        Ok(ForwardOutput { sources, masks, branch_weights })
    }

    /// Value-only inference returning one waveform per source.
    pub fn separate(&self, params: &ParamStore, mixture: &Waveform, seg_len: Option<usize>) -> Result<Vec<Waveform>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, params, mixture.samples(), seg_len)?;
        out.sources
            .iter()
            .map(|&s| Waveform::new(g.row(s), mixture.sample_rate()))
            .collect()
    }
}
