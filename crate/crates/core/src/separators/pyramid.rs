use ndarray::Array2;

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};
use crate::separators::{front, head, init_front, init_head, Logits, Separator, SeparatorConfig, WeightorConfig};
use crate::tcn::{conv1x1, init_conv1x1, init_norm, layer_norm_node, BlockStyle, Tcn};

const WEIGHTOR: &str = "separator.weightor";

fn branch_tcn_prefix(b: usize, i: usize) -> String {
    format!("separator.branch{b}.tcn{i}")
}

fn branch_head_prefix(b: usize) -> String {
    format!("separator.branch{b}.out")
}

/// Small network mapping the encoder output to simplex weights over branches.
///
/// conv(k) → PReLU → layer norm → 1x1 → PReLU → 1x1 → PReLU → 1x1 to one
/// score per branch → max over frames → softmax.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Weightor {
    pub cfg: WeightorConfig,
    pub in_channels: usize,
    pub branches: usize,
}

impl Weightor {
    pub fn init_params(&self, init: &Initializer, store: &mut ParamStore) {
        let h = self.cfg.hidden;
        init_conv1x1(init, store, &format!("{WEIGHTOR}.conv"), self.cfg.kernel * self.in_channels, h);
        for i in 0..3 {
            store.insert(format!("{WEIGHTOR}.prelu{i}"), Array2::from_elem((1, h), 0.25));
        }
        init_norm(store, &format!("{WEIGHTOR}.norm"), h);
        init_conv1x1(init, store, &format!("{WEIGHTOR}.fc0"), h, h);
        init_conv1x1(init, store, &format!("{WEIGHTOR}.fc1"), h, h);
        init_conv1x1(init, store, &format!("{WEIGHTOR}.fc2"), h, self.branches);
    }

    /// `1 × branches` weights on the simplex.
    pub fn forward(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<NodeId> {
        let k = self.cfg.kernel;
        let right = k - 1 - (k - 1) / 2;
        // Tap t reads frame p + right - t, as in the depthwise convolutions;
        // stacking shifted copies turns the convolution into one matmul.
        let taps: Vec<NodeId> = (0..k).map(|t| g.shift(rep, t as isize - right as isize)).collect();
        let stacked = if taps.len() == 1 { taps[0] } else { g.concat_cols(&taps) };
        let mut h = conv1x1(g, params, &format!("{WEIGHTOR}.conv"), stacked)?;
        h = self.prelu(g, params, 0, h)?;
        h = layer_norm_node(g, params, &format!("{WEIGHTOR}.norm"), h)?;
        h = conv1x1(g, params, &format!("{WEIGHTOR}.fc0"), h)?;
        h = self.prelu(g, params, 1, h)?;
        h = conv1x1(g, params, &format!("{WEIGHTOR}.fc1"), h)?;
        h = self.prelu(g, params, 2, h)?;
        let scores = conv1x1(g, params, &format!("{WEIGHTOR}.fc2"), h)?;
        let pooled = g.max_pool_rows(scores);
        Ok(g.softmax_row(pooled))
    }

    fn prelu(&self, g: &mut Graph, params: &ParamStore, i: usize, x: NodeId) -> Result<NodeId> {
        let slope = g.param(params, &format!("{WEIGHTOR}.prelu{i}"))?;
        Ok(g.prelu(x, slope))
    }
}

/// Branches of different depth over a shared front, mixed by learned weights.
#[derive(Debug, Clone)]
pub struct PyramidSeparator {
    cfg: SeparatorConfig,
    num_basis: usize,
    branches: Vec<Vec<Tcn>>,
    weightor: Weightor,
}

impl PyramidSeparator {
    pub fn new(cfg: &SeparatorConfig, num_basis: usize) -> Result<Self> {
        cfg.validate()?;
        let tcn_cfg = cfg.tcn_config();
        let branches = cfg
            .py_branch_depths
            .iter()
            .map(|&d| (0..d).map(|_| Tcn::new(&tcn_cfg, BlockStyle::Gated)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let weightor = Weightor { cfg: cfg.weightor.clone(), in_channels: num_basis, branches: branches.len() };
        Ok(Self { cfg: cfg.clone(), num_basis, branches, weightor })
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn weightor(&self) -> &Weightor {
        &self.weightor
    }

    /// Per-branch mask logits, before weighting.
    pub fn branch_logits(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<Vec<NodeId>> {
        let shared = front(g, params, rep)?;
        self.branches
            .iter()
            .enumerate()
            .map(|(b, tcns)| {
                let mut h = shared;
                for (i, tcn) in tcns.iter().enumerate() {
                    h = tcn.forward(g, params, &branch_tcn_prefix(b, i), h)?.out;
                }
                head(g, params, &branch_head_prefix(b), h)
            })
            .collect()
    }

    /// Forward pass with the branch weights fixed instead of predicted.
    pub fn forward_with_weights(&self, g: &mut Graph, params: &ParamStore, rep: NodeId, weights: &[f64]) -> Result<Logits> {
        if weights.len() != self.branches.len() {
            return Err(Error::Shape(format!("{} branch weights for {} branches", weights.len(), self.branches.len())));
        }
        let w = g.constant(Array2::from_shape_vec((1, weights.len()), weights.to_vec()).expect("row shape"));
        self.mix(g, params, rep, w)
    }

    fn mix(&self, g: &mut Graph, params: &ParamStore, rep: NodeId, weights: NodeId) -> Result<Logits> {
        let per_branch = self.branch_logits(g, params, rep)?;
        let mut acc: Option<NodeId> = None;
        for (b, l) in per_branch.into_iter().enumerate() {
            let term = g.scale_by_entry(l, weights, b);
            acc = Some(match acc {
                Some(a) => g.add(a, term),
                None => term,
            });
        }
        Ok(Logits { logits: acc.expect("at least one branch"), branch_weights: Some(weights) })
    }
}

impl Separator for PyramidSeparator {
    fn name(&self) -> &'static str {
        "py"
    }

    fn config(&self) -> &SeparatorConfig {
        &self.cfg
    }

    fn num_basis(&self) -> usize {
        self.num_basis
    }

    fn init_params(&self, init: &Initializer, store: &mut ParamStore) {
        init_front(&self.cfg, self.num_basis, init, store);
        for (b, tcns) in self.branches.iter().enumerate() {
            for (i, tcn) in tcns.iter().enumerate() {
                tcn.init_params(init, store, &branch_tcn_prefix(b, i));
            }
            init_head(&self.cfg, self.num_basis, init, store, &branch_head_prefix(b));
        }
        self.weightor.init_params(init, store);
    }

    fn logits(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<Logits> {
        let w = self.weightor.forward(g, params, rep)?;
        self.mix(g, params, rep, w)
    }

    fn receptive_fields(&self) -> Result<Vec<(String, usize)>> {
        let mut out = vec![("per_tcn".to_string(), self.cfg.tcn_config().receptive_field()?)];
        for (b, &depth) in self.cfg.py_branch_depths.iter().enumerate() {
            let all: Vec<usize> = std::iter::repeat_n(self.cfg.dilations.iter().copied(), depth).flatten().collect();
            out.push((format!("branch{b}"), crate::tcn::receptive_field(&all, self.cfg.kernel)?));
        }
        Ok(out)
    }
}
