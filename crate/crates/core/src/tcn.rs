//! Temporal convolution primitives: dilated depthwise convolution, global
//! normalization, the residual 1-D conv block and its gated, parallel and
//! highway variants, and receptive-field arithmetic.
//!
//! A block has two sites. Site `a` is the input sub-chain
//! `1x1 conv (B→H) → PReLU → norm`; site `b` is the output sub-chain
//! `depthwise conv → PReLU → norm → 1x1 conv (H→B)`. The block style decides
//! how each site wraps its sub-chain.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlockConfig {
    /// Residual channels `B`.
    pub in_channels: usize,
    /// Hidden channels `H` of the depthwise stage.
    pub hidden_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub gated: bool,
    #[serde(default)]
    pub causal: bool,
}

impl ConvBlockConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.hidden_channels == 0 {
            return Err(Error::Config("block channels must be positive".into()));
        }
        if self.kernel == 0 || self.dilation == 0 {
            return Err(Error::Config("kernel size and dilation must be positive".into()));
        }
        Ok(())
    }

    /// Zero padding before the first frame; the rest of `(K-1)·d` goes after the last.
    pub fn left_pad(&self) -> usize {
        let total = (self.kernel - 1) * self.dilation;
        if self.causal {
            total
        } else {
            total / 2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TcnConfig {
    pub dilations: Vec<usize>,
    /// Template for every block; its `dilation` is replaced per block.
    pub block: ConvBlockConfig,
}

impl TcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() {
            return Err(Error::Config("a TCN needs at least one dilation".into()));
        }
        if self.dilations.contains(&0) {
            return Err(Error::Config("dilations must be >= 1".into()));
        }
        self.block.validate()
    }

    pub fn block_configs(&self) -> impl Iterator<Item = ConvBlockConfig> + '_ {
        self.dilations.iter().map(|&dilation| ConvBlockConfig { dilation, ..self.block })
    }

    pub fn receptive_field(&self) -> Result<usize> {
        receptive_field(&self.dilations, self.block.kernel)
    }
}

/// Frames of input that influence one output frame of a stack of blocks:
/// `1 + (K-1)·Σd`.
pub fn receptive_field(dilations: &[usize], kernel: usize) -> Result<usize> {
    if dilations.is_empty() {
        return Err(Error::Precondition("empty dilation list".into()));
    }
    if kernel == 0 {
        return Err(Error::Precondition("kernel size must be positive".into()));
    }
    Ok(1 + (kernel - 1) * dilations.iter().sum::<usize>())
}

/// How a block wraps its two sub-chains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStyle {
    /// `site(x) = chain(x)`
    Plain,
    /// `site(x) = chain(x) ⊙ σ(gate(x))`, gate a 1x1 conv of the site input.
    Gated,
    /// Mean of independently parameterized copies of the (gated, if the
    /// block config says so) sub-chain.
    Parallel { branches: usize },
    /// `g = σ(chain₀(x))`, `site(x) = g ⊙ (chain₁(x) - chain₂(x)) + (1-g) ⊙ x`.
    /// The carry path replaces the block's residual connection.
    Highway,
}

impl BlockStyle {
    pub fn from_gated(gated: bool) -> Self {
        if gated {
            BlockStyle::Gated
        } else {
            BlockStyle::Plain
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Site {
    Input,
    Output,
}

impl Site {
    fn tag(self) -> &'static str {
        match self {
            Site::Input => "a",
            Site::Output => "b",
        }
    }
}

pub fn init_conv1x1(init: &Initializer, store: &mut ParamStore, prefix: &str, cin: usize, cout: usize) {
    let w = format!("{prefix}.weight");
    store.insert(&w, init.fan_in(&w, (cin, cout), cin));
    store.insert(format!("{prefix}.bias"), Array2::zeros((1, cout)));
}

/// Pointwise convolution: `x · W + b`.
pub fn conv1x1(g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w = g.param(params, &format!("{prefix}.weight"))?;
    let b = g.param(params, &format!("{prefix}.bias"))?;
    let y = g.matmul(x, w);
    Ok(g.add_row(y, b))
}

pub fn init_norm(store: &mut ParamStore, prefix: &str, channels: usize) {
    store.insert(format!("{prefix}.gain"), Array2::ones((1, channels)));
    store.insert(format!("{prefix}.bias"), Array2::zeros((1, channels)));
}

/// Global normalization followed by per-channel gain and bias.
pub fn global_norm_node(g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let n = g.global_norm(x);
    affine(g, params, prefix, n)
}

/// Per-frame layer normalization followed by per-channel gain and bias.
pub fn layer_norm_node(g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let n = g.row_norm(x);
    affine(g, params, prefix, n)
}

fn affine(g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
    let gain = g.param(params, &format!("{prefix}.gain"))?;
    let bias = g.param(params, &format!("{prefix}.bias"))?;
    let y = g.mul_row(x, gain);
    Ok(g.add_row(y, bias))
}

/// One residual 1-D conv block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub cfg: ConvBlockConfig,
    pub style: BlockStyle,
}

impl ConvBlock {
    pub fn new(cfg: ConvBlockConfig, style: BlockStyle) -> Result<Self> {
        cfg.validate()?;
        match style {
            BlockStyle::Parallel { branches: 0 } => {
                return Err(Error::Config("parallel sites need at least one branch".into()))
            }
            BlockStyle::Highway if cfg.in_channels != cfg.hidden_channels => {
                return Err(Error::Config(format!(
                    "highway blocks carry their input through each site, so residual ({}) and hidden ({}) channels must match",
                    cfg.in_channels, cfg.hidden_channels
                )))
            }
            _ => {}
        }
        Ok(Self { cfg, style })
    }

    /// Block using the plain or gated style from `cfg.gated`.
    pub fn from_config(cfg: ConvBlockConfig) -> Result<Self> {
        Self::new(cfg, BlockStyle::from_gated(cfg.gated))
    }

    fn dims(&self, site: Site) -> (usize, usize) {
        match site {
            Site::Input => (self.cfg.in_channels, self.cfg.hidden_channels),
            Site::Output => (self.cfg.hidden_channels, self.cfg.in_channels),
        }
    }

    pub fn init_params(&self, init: &Initializer, store: &mut ParamStore, prefix: &str) {
        for site in [Site::Input, Site::Output] {
            let p = format!("{prefix}.{}", site.tag());
            match self.style {
                BlockStyle::Plain => self.init_chain(init, store, &p, site),
                BlockStyle::Gated => {
                    self.init_chain(init, store, &p, site);
                    self.init_gate(init, store, &p, site);
                }
                BlockStyle::Parallel { branches } => {
                    for i in 0..branches {
                        let bp = format!("{p}.branch{i}");
                        self.init_chain(init, store, &bp, site);
                        if self.cfg.gated {
                            self.init_gate(init, store, &bp, site);
                        }
                    }
                }
                BlockStyle::Highway => {
                    for i in 0..3 {
                        self.init_chain(init, store, &format!("{p}.branch{i}"), site);
                    }
                }
            }
        }
    }

    fn init_chain(&self, init: &Initializer, store: &mut ParamStore, p: &str, site: Site) {
        let (cin, cout) = self.dims(site);
        let h = self.cfg.hidden_channels;
        match site {
            Site::Input => {
                init_conv1x1(init, store, &format!("{p}.conv"), cin, cout);
                store.insert(format!("{p}.prelu"), Array2::from_elem((1, h), 0.25));
                init_norm(store, &format!("{p}.norm"), h);
            }
            Site::Output => {
                let k = self.cfg.kernel;
                let name = format!("{p}.dconv");
                store.insert(&name, init.fan_in(&name, (k, h), k));
                store.insert(format!("{p}.prelu"), Array2::from_elem((1, h), 0.25));
                init_norm(store, &format!("{p}.norm"), h);
                init_conv1x1(init, store, &format!("{p}.conv"), cin, cout);
            }
        }
    }

    fn init_gate(&self, init: &Initializer, store: &mut ParamStore, p: &str, site: Site) {
        let (cin, cout) = self.dims(site);
        init_conv1x1(init, store, &format!("{p}.gate"), cin, cout);
    }

    fn chain(&self, g: &mut Graph, params: &ParamStore, p: &str, site: Site, x: NodeId) -> Result<NodeId> {
        let slope = g.param(params, &format!("{p}.prelu"))?;
        match site {
            Site::Input => {
                let h = conv1x1(g, params, &format!("{p}.conv"), x)?;
                let h = g.prelu(h, slope);
                global_norm_node(g, params, &format!("{p}.norm"), h)
            }
            Site::Output => {
                let k = g.param(params, &format!("{p}.dconv"))?;
                let h = g.depthwise_conv(x, k, self.cfg.dilation, self.cfg.left_pad());
                let h = g.prelu(h, slope);
                let h = global_norm_node(g, params, &format!("{p}.norm"), h)?;
                conv1x1(g, params, &format!("{p}.conv"), h)
            }
        }
    }

    fn gated_chain(&self, g: &mut Graph, params: &ParamStore, p: &str, site: Site, x: NodeId) -> Result<NodeId> {
        let main = self.chain(g, params, p, site, x)?;
        let pre = conv1x1(g, params, &format!("{p}.gate"), x)?;
        let gate = g.sigmoid(pre);
        Ok(g.mul(main, gate))
    }

    fn site(&self, g: &mut Graph, params: &ParamStore, prefix: &str, site: Site, x: NodeId) -> Result<NodeId> {
        let p = format!("{prefix}.{}", site.tag());
        match self.style {
            BlockStyle::Plain => self.chain(g, params, &p, site, x),
            BlockStyle::Gated => self.gated_chain(g, params, &p, site, x),
            BlockStyle::Parallel { branches } => {
                let mut outs = Vec::with_capacity(branches);
                for i in 0..branches {
                    let bp = format!("{p}.branch{i}");
                    outs.push(if self.cfg.gated {
                        self.gated_chain(g, params, &bp, site, x)?
                    } else {
                        self.chain(g, params, &bp, site, x)?
                    });
                }
                Ok(g.mean(&outs))
            }
            BlockStyle::Highway => {
                let pre = self.chain(g, params, &format!("{p}.branch0"), site, x)?;
                let gate = g.sigmoid(pre);
                let t1 = self.chain(g, params, &format!("{p}.branch1"), site, x)?;
                let t2 = self.chain(g, params, &format!("{p}.branch2"), site, x)?;
                let diff = g.sub(t1, t2);
                let transformed = g.mul(gate, diff);
                let carry_gate = g.one_minus(gate);
                let carried = g.mul(carry_gate, x);
                Ok(g.add(transformed, carried))
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<NodeId> {
        let a = self.site(g, params, prefix, Site::Input, x)?;
        let y = self.site(g, params, prefix, Site::Output, a)?;
        Ok(match self.style {
            BlockStyle::Highway => y,
            _ => g.add(x, y),
        })
    }
}

/// A stack of blocks following a dilation schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct Tcn {
    pub blocks: Vec<ConvBlock>,
}

/// Final output of a TCN plus the running output after every block.
#[derive(Debug, Clone)]
pub struct TcnOutput {
    pub out: NodeId,
    pub taps: Vec<NodeId>,
}

impl Tcn {
    pub fn new(cfg: &TcnConfig, style: BlockStyle) -> Result<Self> {
        cfg.validate()?;
        let blocks = cfg.block_configs().map(|c| ConvBlock::new(c, style)).collect::<Result<_>>()?;
        Ok(Self { blocks })
    }

    pub fn init_params(&self, init: &Initializer, store: &mut ParamStore, prefix: &str) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.init_params(init, store, &format!("{prefix}.block{i}"));
        }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamStore, prefix: &str, x: NodeId) -> Result<TcnOutput> {
        let mut h = x;
        let mut taps = Vec::with_capacity(self.blocks.len());
        for (i, b) in self.blocks.iter().enumerate() {
            h = b.forward(g, params, &format!("{prefix}.block{i}"), h)?;
            taps.push(h);
        }
        Ok(TcnOutput { out: h, taps })
    }
}

/// Per-channel dilated convolution of a `T × C` sequence with `K × C` taps,
/// length-preserving under the block padding rule.
pub fn dilated_depthwise_conv(x: &Array2<f64>, kernel: &Array2<f64>, dilation: usize, causal: bool) -> Result<Array2<f64>> {
    if kernel.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "kernel has {} channels, input {}",
            kernel.ncols(),
            x.ncols()
        )));
    }
    if x.nrows() == 0 || kernel.nrows() == 0 || dilation == 0 {
        return Err(Error::Shape("empty input or kernel".into()));
    }
    let cfg = ConvBlockConfig {
        in_channels: x.ncols(),
        hidden_channels: x.ncols(),
        kernel: kernel.nrows(),
        dilation,
        gated: false,
        causal,
    };
    Ok(crate::graph::depthwise_forward(x, kernel, dilation, cfg.left_pad()))
}

/// Normalizes over all time steps and channels jointly, then applies
/// per-channel `gain` and `bias` (each `1 × C`).
pub fn global_norm(x: &Array2<f64>, gain: &Array2<f64>, bias: &Array2<f64>) -> Result<Array2<f64>> {
    if x.len() < 2 {
        return Err(Error::Shape("global normalization needs at least two values".into()));
    }
    if gain.dim() != (1, x.ncols()) || bias.dim() != (1, x.ncols()) {
        return Err(Error::Shape("gain and bias must be 1 × channels".into()));
    }
    let (y, _) = crate::graph::normalize_all(x);
    Ok(y * gain + bias)
}

/// Runs one block (plain or gated per `cfg.gated`) on a `T × B` input.
pub fn conv_block_forward(x: &Array2<f64>, cfg: &ConvBlockConfig, params: &ParamStore, prefix: &str) -> Result<Array2<f64>> {
    run_block(x, &ConvBlock::from_config(*cfg)?, params, prefix)
}

/// Runs one gated block; `cfg.gated` must be set.
pub fn gated_conv_block_forward(x: &Array2<f64>, cfg: &ConvBlockConfig, params: &ParamStore, prefix: &str) -> Result<Array2<f64>> {
    if !cfg.gated {
        return Err(Error::Config("gated_conv_block_forward needs a gated config".into()));
    }
    conv_block_forward(x, cfg, params, prefix)
}

/// Runs any block on a constant input.
pub fn run_block(x: &Array2<f64>, block: &ConvBlock, params: &ParamStore, prefix: &str) -> Result<Array2<f64>> {
    if x.ncols() != block.cfg.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, block expects {}",
            x.ncols(),
            block.cfg.in_channels
        )));
    }
    let mut g = Graph::new();
    let xi = g.constant(x.clone());
    let y = block.forward(&mut g, params, prefix, xi)?;
    Ok(g.value(y).clone())
}
