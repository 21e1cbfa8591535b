use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::params::{Initializer, ParamStore};
use crate::separators::serial::tcn_prefix;
use crate::separators::{front, head, init_front, init_head, Logits, Separator, SeparatorConfig};
use crate::tcn::{BlockStyle, Tcn};

const HEAD: &str = "separator.out";

/// Two-level multi-scale averaging with exactly the parameters of `porta`.
///
/// Inside each TCN the running outputs after every block are averaged, and
/// that average feeds the next TCN; the separator output is the average of
/// all TCN-level averages.
#[derive(Debug, Clone)]
pub struct SharedScaleSeparator {
    cfg: SeparatorConfig,
    num_basis: usize,
    tcns: Vec<Tcn>,
}

impl SharedScaleSeparator {
    pub fn new(cfg: &SeparatorConfig, num_basis: usize) -> Result<Self> {
        cfg.validate()?;
        let tcn_cfg = cfg.tcn_config();
        let tcns = (0..cfg.num_tcns).map(|_| Tcn::new(&tcn_cfg, BlockStyle::Gated)).collect::<Result<_>>()?;
        Ok(Self { cfg: cfg.clone(), num_basis, tcns })
    }
}

impl Separator for SharedScaleSeparator {
    fn name(&self) -> &'static str {
        "sh"
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
        let mut tcn_means = Vec::with_capacity(self.tcns.len());
        for (i, tcn) in self.tcns.iter().enumerate() {
            let out = tcn.forward(g, params, &tcn_prefix(i), h)?;
            h = g.mean(&out.taps);
            tcn_means.push(h);
        }
        let pooled = g.mean(&tcn_means);
        Ok(Logits { logits: head(g, params, HEAD, pooled)?, branch_weights: None })
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
