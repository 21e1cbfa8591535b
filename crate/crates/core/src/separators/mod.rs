//! Mask-estimating separators. Each variant implements [`Separator`] and is
//! registered by name in a [`SeparatorRegistry`]; configs select one with the
//! `variant` string.

mod pyramid;
mod serial;
mod shared;

use std::collections::BTreeMap;
use std::fmt;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{LatentRep, MaskSet};
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};
use crate::tcn::{conv1x1, init_conv1x1, init_norm, layer_norm_node, ConvBlockConfig, TcnConfig};

pub use pyramid::{PyramidSeparator, Weightor};
pub use serial::SerialSeparator;
pub use shared::SharedScaleSeparator;

/// Branch-weighting network of the pyramid separator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WeightorConfig {
    pub hidden: usize,
    /// Kernel of the leading convolution.
    pub kernel: usize,
}

impl Default for WeightorConfig {
    fn default() -> Self {
        Self { hidden: 64, kernel: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorConfig {
    /// Registry name: `porta`, `py`, `sh`, `pa` or `su`.
    pub variant: String,
    pub num_sources: usize,
    /// Gated TCNs in series (all variants except `py`).
    pub num_tcns: usize,
    /// TCNs per pyramid branch (`py` only).
    pub py_branch_depths: Vec<usize>,
    /// Residual channels `B` inside the TCNs.
    pub bottleneck: usize,
    /// Hidden channels `H` of each block.
    pub hidden: usize,
    pub kernel: usize,
    pub dilations: Vec<usize>,
    pub causal: bool,
    pub weightor: WeightorConfig,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            variant: "porta".into(),
            num_sources: 2,
            num_tcns: 4,
            py_branch_depths: vec![3, 4, 5],
            bottleneck: 128,
            hidden: 128,
            kernel: 3,
            dilations: vec![1, 2, 4, 4],
            causal: false,
            weightor: WeightorConfig::default(),
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_sources < 2 {
            return Err(Error::Config(format!("need at least 2 sources, got {}", self.num_sources)));
        }
        if self.num_tcns == 0 {
            return Err(Error::Config("num_tcns must be >= 1".into()));
        }
        if self.py_branch_depths.is_empty() || self.py_branch_depths.contains(&0) {
            return Err(Error::Config("pyramid branch depths must be non-empty and >= 1".into()));
        }
        if self.weightor.hidden == 0 || self.weightor.kernel == 0 {
            return Err(Error::Config("weightor sizes must be positive".into()));
        }
        self.tcn_config().validate()
    }

    /// Gated TCN shared by every variant.
    pub fn tcn_config(&self) -> TcnConfig {
        TcnConfig {
            dilations: self.dilations.clone(),
            block: ConvBlockConfig {
                in_channels: self.bottleneck,
                hidden_channels: self.hidden,
                kernel: self.kernel,
                dilation: 1,
                gated: true,
                causal: self.causal,
            },
        }
    }
}

/// Mask logits of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Logits {
    /// `frames × (S·N)`, source-major column blocks.
    pub logits: NodeId,
    /// `1 × branches` simplex weights, when the variant has branches to weigh.
    pub branch_weights: Option<NodeId>,
}

#[derive(Debug, Clone, Copy)]
pub struct SeparatorOutput {
    pub logits: NodeId,
    /// Softmax over sources of `logits`, same layout.
    pub masks: NodeId,
    pub branch_weights: Option<NodeId>,
}

pub trait Separator: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn config(&self) -> &SeparatorConfig;

    /// Encoder channels `N` the separator consumes and masks.
    fn num_basis(&self) -> usize;

    fn init_params(&self, init: &Initializer, store: &mut ParamStore);

    fn logits(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<Logits>;

    /// Receptive fields in encoder frames, labelled per stack.
    fn receptive_fields(&self) -> Result<Vec<(String, usize)>>;

    fn forward(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<SeparatorOutput> {
        let Logits { logits, branch_weights } = self.logits(g, params, rep)?;
        let masks = g.group_softmax(logits, self.config().num_sources);
        Ok(SeparatorOutput { logits, masks, branch_weights })
    }

    /// Masks for a constant representation.
    fn mask_set(&self, rep: &LatentRep, params: &ParamStore) -> Result<MaskSet> {
        if rep.channels() != self.num_basis() {
            return Err(Error::Shape(format!(
                "representation has {} channels, separator expects {}",
                rep.channels(),
                self.num_basis()
            )));
        }
        let mut g = Graph::new();
        let r = g.constant(rep.values.clone());
        let out = self.forward(&mut g, params, r)?;
        MaskSet::from_stacked(g.value(out.masks), self.config().num_sources)
    }
}

pub type SeparatorFactory = fn(&SeparatorConfig, usize) -> Result<Box<dyn Separator>>;

/// Name → constructor table for separator variants.
#[derive(Clone)]
pub struct SeparatorRegistry {
    factories: BTreeMap<String, SeparatorFactory>,
}

impl fmt::Debug for SeparatorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for SeparatorRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl SeparatorRegistry {
    pub fn empty() -> Self {
        Self { factories: BTreeMap::new() }
    }

    /// The five gated-TCN variants.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("porta", |c, n| Ok(Box::new(SerialSeparator::porta(c, n)?)));
        r.register("pa", |c, n| Ok(Box::new(SerialSeparator::parallel(c, n)?)));
        r.register("su", |c, n| Ok(Box::new(SerialSeparator::highway(c, n)?)));
        r.register("sh", |c, n| Ok(Box::new(SharedScaleSeparator::new(c, n)?)));
        r.register("py", |c, n| Ok(Box::new(PyramidSeparator::new(c, n)?)));
        r
    }

    pub fn register(&mut self, name: &str, factory: SeparatorFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, cfg: &SeparatorConfig, num_basis: usize) -> Result<Box<dyn Separator>> {
        let factory = self.factories.get(&cfg.variant).ok_or_else(|| {
            Error::Config(format!("unknown separator variant `{}` (known: {})", cfg.variant, self.names().join(", ")))
        })?;
        if num_basis == 0 {
            return Err(Error::Config("num_basis must be positive".into()));
        }
        cfg.validate()?;
        factory(cfg, num_basis)
    }
}

/// Exact number of learnable scalars in the separator selected by `cfg.variant`.
pub fn count_parameters(cfg: &SeparatorConfig, num_basis: usize) -> Result<usize> {
    let sep = SeparatorRegistry::builtin().build(cfg, num_basis)?;
    let mut store = ParamStore::new();
    sep.init_params(&Initializer::new(0), &mut store);
    Ok(store.num_scalars())
}

pub(crate) const IN_NORM: &str = "separator.in_norm";
pub(crate) const BOTTLENECK: &str = "separator.bottleneck";

/// Layer norm over channels and a 1x1 projection to the bottleneck width.
pub(crate) fn init_front(cfg: &SeparatorConfig, n: usize, init: &Initializer, store: &mut ParamStore) {
    init_norm(store, IN_NORM, n);
    init_conv1x1(init, store, BOTTLENECK, n, cfg.bottleneck);
}

pub(crate) fn front(g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<NodeId> {
    let h = layer_norm_node(g, params, IN_NORM, rep)?;
    conv1x1(g, params, BOTTLENECK, h)
}

/// 1x1 projection from the bottleneck to `S·N` mask logits.
pub(crate) fn init_head(cfg: &SeparatorConfig, n: usize, init: &Initializer, store: &mut ParamStore, prefix: &str) {
    init_conv1x1(init, store, prefix, cfg.bottleneck, cfg.num_sources * n);
}

pub(crate) fn head(g: &mut Graph, params: &ParamStore, prefix: &str, h: NodeId) -> Result<NodeId> {
    conv1x1(g, params, prefix, h)
}

/// Utility for tests and diagnostics: stacked mask values split by source.
pub fn split_sources(stacked: &Array2<f64>, sources: usize) -> Vec<Array2<f64>> {
    let width = stacked.ncols() / sources;
    (0..sources)
        .map(|s| stacked.slice(ndarray::s![.., s * width..(s + 1) * width]).to_owned())
        .collect()
}
