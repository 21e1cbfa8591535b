use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};
use crate::separators::{front, head, init_front, init_head, Logits, Separator, SeparatorConfig};
use crate::tcn::{BlockStyle, Tcn};

const HEAD: &str = "separator.out";

/// Gated TCNs in series between the shared front and the mask head.
///
/// The block style picks the variant: `porta` uses gated blocks, `pa`
/// averages two parallel copies of each gated sub-chain, `su` replaces each
/// sub-chain with a gated difference of two copies plus a carry path.
#[derive(Debug, Clone)]
pub struct SerialSeparator {
    name: &'static str,
    cfg: SeparatorConfig,
    num_basis: usize,
    tcns: Vec<Tcn>,
}

impl SerialSeparator {
    pub fn with_style(name: &'static str, cfg: &SeparatorConfig, num_basis: usize, style: BlockStyle) -> Result<Self> {
        cfg.validate()?;
        let tcn_cfg = cfg.tcn_config();
        let tcns = (0..cfg.num_tcns).map(|_| Tcn::new(&tcn_cfg, style)).collect::<Result<_>>()?;
        Ok(Self { name, cfg: cfg.clone(), num_basis, tcns })
    }

    pub fn porta(cfg: &SeparatorConfig, num_basis: usize) -> Result<Self> {
        Self::with_style("porta", cfg, num_basis, BlockStyle::Gated)
    }

    pub fn parallel(cfg: &SeparatorConfig, num_basis: usize) -> Result<Self> {
        Self::with_style("pa", cfg, num_basis, BlockStyle::Parallel { branches: 2 })
    }

    pub fn highway(cfg: &SeparatorConfig, num_basis: usize) -> Result<Self> {
        Self::with_style("su", cfg, num_basis, BlockStyle::Highway)
    }

    pub fn tcns(&self) -> &[Tcn] {
        &self.tcns
    }
}

pub(crate) fn tcn_prefix(i: usize) -> String {
    format!("separator.tcn{i}")
}

impl Separator for SerialSeparator {
    fn name(&self) -> &'static str {
        self.name
    }

    fn config(&self) -> &SeparatorConfig {
        &self.cfg
    }

    fn num_basis(&self) -> usize {
        self.num_basis
    }

    fn init_params(&self, init: &Initializer, store: &mut ParamStore) {
        init_front(&self.cfg, self.num_basis, init, store);
        for (i, tcn) in self.tcns.iter().enumerate() {
            tcn.init_params(init, store, &tcn_prefix(i));
        }
        init_head(&self.cfg, self.num_basis, init, store, HEAD);
    }

    fn logits(&self, g: &mut Graph, params: &ParamStore, rep: NodeId) -> Result<Logits> {
        let mut h = front(g, params, rep)?;
        for (i, tcn) in self.tcns.iter().enumerate() {
            h = tcn.forward(g, params, &tcn_prefix(i), h)?.out;
        }
        Ok(Logits { logits: head(g, params, HEAD, h)?, branch_weights: None })
    }

    fn receptive_fields(&self) -> Result<Vec<(String, usize)>> {
        let per = self.cfg.tcn_config().receptive_field()?;
        let all: Vec<usize> = std::iter::repeat_n(self.cfg.dilations.iter().copied(), self.cfg.num_tcns).flatten().collect();
        Ok(vec![
            ("per_tcn".into(), per),
            ("total".into(), crate::tcn::receptive_field(&all, self.cfg.kernel)?),
        ])
    }
}
